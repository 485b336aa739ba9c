"""State estimation / forecasting pipeline on synthetic load series.

The chain: an AR(1) load process drives the power-flow oracle to produce a
voltage time series; phasor measurements at the observed nodes are inverted
frame by frame into recovered states; windows of recovered states are
regressed onto future true states with a physics residual penalty tying the
predicted phasors to the measured complex power at the observed nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import grid_model as gm
from . import sampling
from .autodiff import Tensor
from .gso import PHASE_ANGLE, RealGso, signal_from_voltage
from .gsp import rescale_operator


@dataclass(frozen=True)
class ArProcess:
    """Per-node AR(1) active-power loads at fixed power factor (lagging)."""

    rho: float = 0.4
    sigma: float = 0.004
    nominal_p: float = -0.02
    power_factor: float = 0.95

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ValueError("AR(1) requires |rho| < 1")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power factor in (0, 1]")

    @property
    def tan_phi(self) -> float:
        return math.tan(math.acos(self.power_factor))


@dataclass
class SeriesResult:
    """Solved operating points plus the injections that produced them."""

    ops: list
    injections: np.ndarray  # complex (steps, n_nodes)

    def __len__(self):
        return len(self.ops)


def generate_synthetic_series(
    case: gm.GridCase,
    steps: int,
    process: ArProcess,
    seed: int,
    y: np.ndarray | None = None,
) -> SeriesResult:
    """Drive the power-flow oracle with a seeded AR(1) load process.

    Loads sit on every non-slack node; the reactive part follows the fixed
    power factor. Solver failures carry the step index.
    """
    if y is None:
        y = gm.assemble_admittance(case)
    rng = np.random.default_rng(seed)
    idx_d = np.array(case.nonslack_node_indices)
    n = case.n_nodes
    mean_p = np.full(len(idx_d), process.nominal_p, dtype=float)
    # stationary start
    p = mean_p + process.sigma / math.sqrt(1 - process.rho**2) * rng.standard_normal(
        len(idx_d)
    )
    ops = []
    injections = np.zeros((steps, n), dtype=complex)
    v_prev = None
    for t in range(steps):
        s = np.zeros(n, dtype=complex)
        s[idx_d] = p * (1 + 1j * process.tan_phi)
        try:
            op = gm.solve_power_flow(case, s, y=y, v0=v_prev)
        except gm.PowerFlowError as exc:
            raise gm.PowerFlowError(f"step {t}: {exc}") from None
        ops.append(op)
        injections[t] = s
        v_prev = op.v
        p = mean_p + process.rho * (p - mean_p) + process.sigma * rng.standard_normal(
            len(idx_d)
        )
    return SeriesResult(ops=ops, injections=injections)


@dataclass
class ForecastDataset:
    """Windows of recovered states with true-state targets.

    ``windows`` is (samples, T, 2N) in [phi; |v|] form, ``targets`` the true
    state at each window end plus the horizon. ``meas_v`` / ``meas_i`` carry
    the raw observed phasors at the target time for the physics penalty.
    ``frames`` lists every series index a sample touches (window + target),
    used to prove the splits share no timestamp.
    """

    windows: np.ndarray
    targets: np.ndarray
    meas_v: np.ndarray
    meas_i: np.ndarray
    frames: list[range]
    observed: tuple[int, ...]
    t_window: int
    horizon: int

    def __len__(self):
        return self.windows.shape[0]

    def subset(self, idx) -> "ForecastDataset":
        idx = list(idx)
        return ForecastDataset(
            windows=self.windows[idx],
            targets=self.targets[idx],
            meas_v=self.meas_v[idx],
            meas_i=self.meas_i[idx],
            frames=[self.frames[i] for i in idx],
            observed=self.observed,
            t_window=self.t_window,
            horizon=self.horizon,
        )


def build_dataset(
    series: SeriesResult,
    case: gm.GridCase,
    y: np.ndarray,
    gso: RealGso,
    observed,
    t_window: int = 10,
    horizon: int = 1,
    mu1: float = 1e-6,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> ForecastDataset:
    """Recover each frame from its measurements and window the results.

    Horizon 0 targets the window's own last frame (estimation); larger
    horizons target future frames (forecasting).
    """
    steps = len(series)
    if steps < t_window + horizon:
        raise ValueError(
            f"series of {steps} steps too short for T={t_window}, H={horizon}"
        )
    observed = tuple(int(i) for i in observed)
    nodes = case.nodes
    model = sampling.build_measurement_model(y, observed)
    rng = np.random.default_rng(seed)

    recovered = np.empty((steps, 2 * case.n_nodes))
    meas_v_all = np.empty((steps, len(observed)), dtype=complex)
    meas_i_all = np.empty((steps, len(observed)), dtype=complex)
    for t, op in enumerate(series.ops):
        z = sampling.measure(
            op.v, y, observed, noise_sigma=noise_sigma,
            rng=rng if noise_sigma > 0 else None,
        )
        mo = len(observed)
        meas_i_all[t] = z.z[:mo]
        meas_v_all[t] = z.z[mo:]
        v_hat = sampling.recover_state(z, model, reg=gso.b_hat, mu1=mu1)
        recovered[t] = signal_from_voltage(v_hat, nodes)

    true_states = np.stack(
        [signal_from_voltage(op.v, nodes) for op in series.ops]
    )

    n_samples = steps - t_window - horizon + 1
    windows = np.empty((n_samples, t_window, 2 * case.n_nodes))
    targets = np.empty((n_samples, 2 * case.n_nodes))
    meas_v = np.empty((n_samples, len(observed)), dtype=complex)
    meas_i = np.empty((n_samples, len(observed)), dtype=complex)
    frames = []
    for k in range(n_samples):
        end = k + t_window - 1
        tgt = end + horizon
        windows[k] = recovered[k : k + t_window]
        targets[k] = true_states[tgt]
        meas_v[k] = meas_v_all[tgt]
        meas_i[k] = meas_i_all[tgt]
        frames.append(range(k, tgt + 1))
    return ForecastDataset(
        windows=windows,
        targets=targets,
        meas_v=meas_v,
        meas_i=meas_i,
        frames=frames,
        observed=observed,
        t_window=t_window,
        horizon=horizon,
    )


def time_split(
    data: ForecastDataset, fractions=(0.6, 0.2, 0.2)
) -> tuple[ForecastDataset, ForecastDataset, ForecastDataset]:
    """Chronological train/val/test split, dropping boundary-straddling
    samples so no series frame appears in two splits."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be three numbers summing to 1")
    last_frame = max(r.stop for r in data.frames)
    t1 = int(last_frame * fractions[0])
    t2 = int(last_frame * (fractions[0] + fractions[1]))
    train, val, test = [], [], []
    for k, r in enumerate(data.frames):
        if r.stop - 1 < t1:
            train.append(k)
        elif r.start >= t1 and r.stop - 1 < t2:
            val.append(k)
        elif r.start >= t2:
            test.append(k)
    out = (data.subset(train), data.subset(val), data.subset(test))
    assert_no_leakage(*out)
    return out


def assert_no_leakage(*splits: ForecastDataset) -> None:
    seen: set[int] = set()
    for part in splits:
        mine = set()
        for r in part.frames:
            mine.update(r)
        if mine & seen:
            raise AssertionError(
                f"timestamp leakage across splits: {sorted(mine & seen)[:5]}"
            )
        seen |= mine


def forecast_operator(gso: RealGso) -> np.ndarray:
    """Spectrally rescaled stacked operator the networks filter with."""
    return rescale_operator(gso.s_full)


@dataclass
class ForecastMetrics:
    mse: float
    mape_proxy: float

    def __post_init__(self):
        if self.mse < 0:
            raise ValueError("mse must be nonnegative")


@dataclass
class TrainResult:
    loss_trace: list[float] = field(default_factory=list)
    val_trace: list[float] = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False


def _physics_terms(out: Tensor, data: ForecastDataset, y: np.ndarray, nodes):
    """Squared physics residual per the measured complex power at observed
    nodes, as an autodiff scalar (mean over samples)."""
    n = len(nodes)
    idx = np.array(data.observed)
    off = np.array([PHASE_ANGLE[nd.phase] for nd in nodes])
    phi = out[:, :n]
    mag = out[:, n:]
    ang = phi + Tensor(off)
    v_re = mag * ang.cos()
    v_im = mag * ang.sin()
    y_re, y_im = y.real, y.imag
    i_re = v_re @ y_re - v_im @ y_im
    i_im = v_re @ y_im + v_im @ y_re
    s_re = v_re * i_re + v_im * i_im
    s_im = v_im * i_re - v_re * i_im
    m = data.meas_v * np.conj(data.meas_i)
    key = (slice(None), idx)
    res_re = s_re[key] - Tensor(m.real)
    res_im = s_im[key] - Tensor(m.imag)
    return (res_re.square().sum(axis=1) + res_im.square().sum(axis=1)).mean()


def physics_residual(
    states: np.ndarray, data: ForecastDataset, y: np.ndarray, nodes
) -> float:
    """Numpy evaluation of the penalty at given [phi; |v|] states."""
    out = Tensor(np.atleast_2d(states))
    return float(_physics_terms(out, data, y, nodes).data)


def train_forecaster(
    model,
    data: ForecastDataset,
    s_op: np.ndarray,
    y: np.ndarray,
    nodes,
    mu2: float = 1e-3,
    epochs: int = 2000,
    lr: float = 5e-3,
    val_data: ForecastDataset | None = None,
    patience: int = 200,
) -> TrainResult:
    """Full-batch Adam on MSE plus the mu2-weighted physics residual.

    Stops early when the validation loss has not improved for ``patience``
    epochs (best parameters restored). Raises on NaN loss with the epoch in
    the message.
    """
    if mu2 < 0:
        raise ValueError("mu2 must be nonnegative")
    params = model.params()
    state = ad.AdamState(params)
    result = TrainResult()
    targets = Tensor(data.targets)
    best_val = np.inf
    best_snapshot = None
    stale = 0
    for epoch in range(epochs):
        ad.zero_grads(params)
        out = model.forward(data.windows, s_op)
        loss = (out - targets).square().sum(axis=1).mean()
        if mu2 > 0:
            loss = loss + mu2 * _physics_terms(out, data, y, nodes)
        lv = float(loss.data)
        if not np.isfinite(lv):
            raise RuntimeError(
                f"non-finite training loss {lv} at epoch {epoch}; "
                f"last finite {result.loss_trace[-1] if result.loss_trace else None}"
            )
        loss.backward()
        ad.adam_step(params, state, lr=lr)
        result.loss_trace.append(lv)
        result.epochs_run = epoch + 1
        if val_data is not None and len(val_data):
            vout = model.forward(val_data.windows, s_op)
            vloss = float(
                (vout - Tensor(val_data.targets)).square().sum(axis=1).mean().data
            )
            result.val_trace.append(vloss)
            if vloss < best_val - 1e-12:
                best_val = vloss
                best_snapshot = [p.data.copy() for p in params]
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    result.stopped_early = True
                    break
    if best_snapshot is not None:
        for p, snap in zip(params, best_snapshot):
            p.data = snap
    return result


def evaluate_forecaster(
    model, data: ForecastDataset, s_op: np.ndarray, gso: RealGso
) -> ForecastMetrics:
    """Test MSE plus the injection error proxy against the true states."""
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    pred = model.forward(data.windows, s_op).data
    mse = float(np.mean(np.sum((pred - data.targets) ** 2, axis=1)))
    num = den = 0.0
    for k in range(len(data)):
        inj_pred = gso.b_hat @ pred[k, : gso.n_nodes] + gso.p_cst
        inj_true = gso.b_hat @ data.targets[k, : gso.n_nodes] + gso.p_cst
        num += np.sum(np.abs(inj_pred - inj_true))
        den += np.sum(np.abs(inj_true))
    return ForecastMetrics(mse=mse, mape_proxy=100.0 * num / max(den, 1e-12))


def persistence_metrics(data: ForecastDataset, gso: RealGso) -> ForecastMetrics:
    """Repeat the last recovered frame: the minimal reference forecaster."""
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    pred = data.windows[:, -1, :]
    mse = float(np.mean(np.sum((pred - data.targets) ** 2, axis=1)))
    num = den = 0.0
    for k in range(len(data)):
        inj_pred = gso.b_hat @ pred[k, : gso.n_nodes] + gso.p_cst
        inj_true = gso.b_hat @ data.targets[k, : gso.n_nodes] + gso.p_cst
        num += np.sum(np.abs(inj_pred - inj_true))
        den += np.sum(np.abs(inj_true))
    return ForecastMetrics(mse=mse, mape_proxy=100.0 * num / max(den, 1e-12))
