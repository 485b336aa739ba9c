#!/usr/bin/env python3
"""Graph Fourier analysis of grid states and filtering in the vertex and
spectral domains, including the spatio-temporal filter on a short window."""

import numpy as np

from gridgsp import forecasting as fc
from gridgsp import grid_model as gm
from gridgsp import gso as gsolib
from gridgsp import gsp
from gridgsp.cases import case_path

case = gm.load_case(case_path("case4"))
y = gm.assemble_admittance(case)
g = gsolib.build_real_gso(case)

basis = gsp.gft(g.b_hat)
print("graph frequencies:", np.round(basis.eigvals, 3))

# a solved grid state is smooth on the graph: energy sits at low frequencies
proc = fc.ArProcess(rho=0.5, sigma=0.01, nominal_p=-0.05)
series = fc.generate_synthetic_series(case, 12, proc, seed=4, y=y)
x = gsolib.signal_from_voltage(series.ops[-1].v, case.nodes)
phi = x[:12]
spec = basis.transform(phi)
energy = spec**2 / max(np.sum(spec**2), 1e-30)
print("angle-signal spectral energy by frequency index:")
print(np.array2string(energy, precision=3, suppress_small=True))

# low-pass the angles: keep the polynomial filter cheap (iterated mat-vec)
s_norm = gsp.rescale_operator(g.b_hat, basis.lambda_max)
lp = gsp.PolynomialFilter([0.5, -0.35, 0.15])
smooth = gsp.apply_filter(lp, s_norm, phi)
print(f"\nlow-pass filter: input rough energy {np.sum(np.abs(np.diff(phi))):.4f}, "
      f"output {np.sum(np.abs(np.diff(smooth))):.4f}")

# identical result through the spectral route
spec_route = basis.inverse(
    lp.transfer(2 * basis.eigvals / basis.lambda_max - 1) * basis.transform(phi)
)
print(f"vertex vs spectral route max diff: {np.max(np.abs(smooth - spec_route)):.2e}")

# spatio-temporal filter over the last 4 frames
window = np.stack(
    [gsolib.signal_from_voltage(op.v, case.nodes)[:12] for op in series.ops[-4:]]
)
stf = gsp.SpatioTemporalFilter(np.array([[0.4, 0.3, 0.2, 0.1], [0.2, 0.1, 0.0, 0.0]]))
out = gsp.apply_st_filter(stf, s_norm, window)
print(f"spatio-temporal filter output (first 4 nodes): {np.round(out[:4], 5)}")
