"""Real-valued graph shift operator derived from the multi-phase flow physics.

The shift operator is a susceptance Laplacian weighted by the balanced
three-phase rotation couplings: for each line block the imaginary part of the
admittance is Hadamard-multiplied by the cosine coupling matrix ``gamma_c``
before entering the usual Laplacian assembly. Stacked twice (block diagonal)
it shifts the real signal x = [phi; |v|], where phi are re-centered voltage
angles, and predicts active/reactive injections up to the constant offsets
``p_cst`` / ``q_cst`` contributed by line shunts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid_model import PHASE_ANGLE, PHASES, GridCase, _line_slices


class FloatingInteriorError(Exception):
    """Eliminated node set contains a component with no path to the kept set."""

    def __init__(self, component):
        self.component = list(component)
        super().__init__(
            f"interior block singular: floating component {self.component}"
        )


@dataclass(frozen=True)
class GammaMatrices:
    """Cosine / sine parts of the phase rotation outer product.

    Entry (k, n) is the real / imaginary part of e^{j(theta_k - theta_n)}
    restricted to the present phases, where theta are the nominal angles
    (0, -120, +120 degrees). gamma_c is symmetric with entries in {1, -1/2};
    gamma_s is skew with entries in {0, +-sqrt(3)/2}, the sign following the
    nominal rotation so the constant offsets are exact at the flat point.
    """

    phases: tuple[str, ...]
    gamma_c: np.ndarray
    gamma_s: np.ndarray


@dataclass(frozen=True)
class RealGso:
    """Symmetric real shift operator pair for the signal [phi; |v|].

    ``b_hat`` (N x N) annihilates constants like any Laplacian; ``s_full`` is
    blockdiag(b_hat, b_hat). The affine offsets satisfy, near the flat point,
    p ~ b_hat @ phi + p_cst and q ~ b_hat @ |v| + q_cst.
    """

    b_hat: np.ndarray
    p_cst: np.ndarray
    q_cst: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.b_hat.shape[0]

    @property
    def s_full(self) -> np.ndarray:
        n = self.n_nodes
        s = np.zeros((2 * n, 2 * n))
        s[:n, :n] = self.b_hat
        s[n:, n:] = self.b_hat
        return s


@dataclass(frozen=True)
class ReducedGso:
    """Kron reduction of a shift operator onto a retained node set."""

    retained: tuple[int, ...]
    s_red: np.ndarray


def gamma_matrices(phases) -> GammaMatrices:
    """Rotation coupling blocks for a nonempty subset of {a, b, c}."""
    phases = tuple(phases)
    if not phases:
        raise ValueError("empty phase set")
    idx = [PHASES.index(p) for p in phases]
    if len(set(idx)) != len(idx):
        raise ValueError(f"duplicate phases: {phases}")
    th = np.array([PHASE_ANGLE[p] for p in phases])
    ang = th[:, None] - th[None, :]
    # exact values at the lattice angles: cos in {1, -1/2}, sin in {0, +-sqrt(3)/2}
    gc = np.where(np.isclose(np.cos(ang), 1.0), 1.0, -0.5)
    root3half = math.sqrt(3.0) / 2.0
    gs = np.where(
        np.isclose(np.sin(ang), 0.0), 0.0, np.sign(np.sin(ang)) * root3half
    )
    return GammaMatrices(phases, gc, gs)


def recenter_phases(raw_angles: np.ndarray, nodes) -> np.ndarray:
    """Remove the nominal +-120 degree offsets from voltage angles.

    phi_a = angle, phi_b = angle + 2pi/3, phi_c = angle - 2pi/3, wrapped to
    (-pi, pi]. A balanced flat profile maps to all zeros.
    """
    raw = np.asarray(raw_angles, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("angles must be finite")
    off = np.array([PHASE_ANGLE[n.phase] for n in nodes])
    return _wrap_angle(raw - off)


def unrecenter_phases(phi: np.ndarray, nodes) -> np.ndarray:
    """Inverse of :func:`recenter_phases` (restores nominal offsets)."""
    off = np.array([PHASE_ANGLE[n.phase] for n in nodes])
    return _wrap_angle(np.asarray(phi, dtype=float) + off)


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    w = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
    # keep the branch cut at (-pi, pi]
    w = np.where(w == -math.pi, math.pi, w)
    return w


def signal_from_voltage(v: np.ndarray, nodes) -> np.ndarray:
    """Stack [phi; |v|] from a complex voltage vector."""
    phi = recenter_phases(np.angle(v), nodes)
    return np.concatenate([phi, np.abs(v)])


def voltage_from_signal(x: np.ndarray, nodes) -> np.ndarray:
    """Complex voltage from a stacked [phi; |v|] signal."""
    n = len(nodes)
    ang = unrecenter_phases(x[:n], nodes)
    return x[n:] * np.exp(1j * ang)


def build_real_gso(case: GridCase) -> RealGso:
    """Assemble the real shift operator block by block.

    Per line, with b = Im(series block), bs = Im(shunt block) and the
    Hadamard couplings bh = gamma_c o b, bsh = gamma_c o bs:

        off-diagonal blocks (both orientations):  +bh
        each end's diagonal block:  diag((bsh/2) @ 1) - bsh/2 - bh
        p_cst at each end:  +(1/2) diag-of(gamma_s @ bs)
        q_cst at each end:  -(1/2) diag-of(bsh)

    Row sums cancel exactly (the shunt diagonal term is balanced by its own
    row), so b_hat @ 1 = 0 up to rounding.
    """
    n = case.n_nodes
    b_hat = np.zeros((n, n))
    p_cst = np.zeros(n)
    q_cst = np.zeros(n)
    for ln in case.lines:
        g = gamma_matrices(ln.phases)
        b = 0.5 * (ln.y_series + ln.y_series.T).imag
        bs = 0.5 * (ln.y_shunt + ln.y_shunt.T).imag
        bh = g.gamma_c * b
        bsh = g.gamma_c * bs
        diag_blk = np.diag((0.5 * bsh) @ np.ones(len(ln.phases))) - 0.5 * bsh - bh
        p_c = 0.5 * np.diag(g.gamma_s @ bs)
        q_c = -0.5 * np.diag(bsh)
        fi, ti = _line_slices(case, ln)
        for ii, jj in ((fi, ti), (ti, fi)):
            b_hat[np.ix_(ii, jj)] += bh
            b_hat[np.ix_(ii, ii)] += diag_blk
            p_cst[ii] += p_c
            q_cst[ii] += q_c
    return RealGso(b_hat=b_hat, p_cst=p_cst, q_cst=q_cst)


def linearized_injections(gso: RealGso, x: np.ndarray) -> np.ndarray:
    """Apply the stacked operator: returns [p_tilde; q_tilde] = s_full @ x.

    Adding (p_cst, q_cst) yields the linear prediction of the physical
    injections (p, q).
    """
    x = np.asarray(x, dtype=float)
    n = gso.n_nodes
    if x.shape != (2 * n,):
        raise ValueError(f"signal shape {x.shape}, expected ({2 * n},)")
    return np.concatenate([gso.b_hat @ x[:n], gso.b_hat @ x[n:]])


def predict_injections(gso: RealGso, x: np.ndarray) -> np.ndarray:
    """Linear prediction [p; q] including the constant offsets."""
    return linearized_injections(gso, x) + np.concatenate([gso.p_cst, gso.q_cst])


def kron_reduce(s: np.ndarray, retained) -> ReducedGso:
    """Schur complement of the eliminated block: the reduced shift operator.

    ``retained`` lists row indices of ``s`` to keep, in the order they will
    appear in the reduced operator. Raises :class:`FloatingInteriorError`
    when an eliminated component has no coupling to the retained set (the
    interior block is then structurally singular).
    """
    s = np.asarray(s)
    n = s.shape[0]
    retained = [int(i) for i in retained]
    if len(set(retained)) != len(retained):
        raise ValueError("retained set has duplicates")
    if any(i < 0 or i >= n for i in retained):
        raise ValueError("retained index out of range")
    keep = np.array(retained, dtype=int)
    elim = np.array([i for i in range(n) if i not in set(retained)], dtype=int)
    if elim.size == 0:
        return ReducedGso(tuple(retained), s.copy())

    s_kk = s[np.ix_(keep, keep)]
    s_ke = s[np.ix_(keep, elim)]
    s_ek = s[np.ix_(elim, keep)]
    s_ee = s[np.ix_(elim, elim)]
    try:
        x = np.linalg.solve(s_ee, s_ek)
    except np.linalg.LinAlgError:
        _raise_floating_component(s, keep, elim)
        raise
    red = s_kk - s_ke @ x
    # exact symmetry for symmetric inputs
    red = 0.5 * (red + red.T)
    return ReducedGso(tuple(retained), red)


def _raise_floating_component(s, keep, elim):
    """Identify an eliminated component with no tie to the retained set."""
    tol = 1e-14 * max(1.0, np.max(np.abs(s)))
    pos = {int(j): k for k, j in enumerate(elim)}
    seen = set()
    for start in elim:
        if start in seen:
            continue
        comp = {int(start)}
        stack = [int(start)]
        while stack:
            u = stack.pop()
            for v in elim:
                v = int(v)
                if v not in comp and abs(s[u, v]) > tol:
                    comp.add(v)
                    stack.append(v)
        seen |= comp
        coupled = any(
            abs(s[u, k]) > tol for u in comp for k in keep
        )
        grounded = any(
            abs(s[u, u] - sum(abs(s[u, v]) for v in range(s.shape[0]) if v != u))
            > tol
            for u in comp
        )
        if not coupled and not grounded:
            raise FloatingInteriorError(sorted(comp))


def save_gso(path, gso: RealGso, case: GridCase) -> None:
    """Write b_hat plus offsets as text with the node ordering in the header."""
    n = gso.n_nodes
    with open(path, "w") as fh:
        fh.write("# gridgsp gso v1\n")
        fh.write(f"# nodes {n}\n")
        for k, node in enumerate(case.nodes):
            fh.write(f"# node {k} {node.bus} {node.phase}\n")
        fh.write("# matrix b_hat (rows follow node order)\n")
        for row in gso.b_hat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        fh.write("# p_cst\n")
        fh.write(" ".join(f"{v:.17g}" for v in gso.p_cst) + "\n")
        fh.write("# q_cst\n")
        fh.write(" ".join(f"{v:.17g}" for v in gso.q_cst) + "\n")


def load_gso(path) -> RealGso:
    """Read back a file produced by :func:`save_gso`."""
    rows: list[list[float]] = []
    vectors: list[np.ndarray] = []
    section = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "matrix" in line:
                    section = "matrix"
                elif "p_cst" in line or "q_cst" in line:
                    section = "vector"
                continue
            vals = [float(t) for t in line.split()]
            if section == "matrix":
                rows.append(vals)
            elif section == "vector":
                vectors.append(np.array(vals))
    if len(vectors) != 2:
        raise ValueError("malformed gso file: expected p_cst and q_cst")
    return RealGso(b_hat=np.array(rows), p_cst=vectors[0], q_cst=vectors[1])
