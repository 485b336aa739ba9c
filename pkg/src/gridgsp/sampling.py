"""Sensor placement, the phasor measurement model, and regularized recovery.

Placement picks the rows of the first graph-frequency eigenvectors that stay
as far from collinear as possible (max-min singular value, greedy forward
selection). Recovery solves the regularized least squares inversion of the
stacked current/voltage measurement model in closed form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .gsp import GftBasis


@dataclass(frozen=True)
class PlacementResult:
    selected: tuple[int, ...]
    sigma_min: float


@dataclass(frozen=True)
class MeasurementModel:
    """z = [i_obs; v_obs] = h @ [v_obs; v_hidden] + noise.

    ``column_order`` maps model columns back to global node indices
    (observed nodes first, hidden nodes after).
    """

    h: np.ndarray
    observed: tuple[int, ...]
    hidden: tuple[int, ...]

    @property
    def column_order(self) -> tuple[int, ...]:
        return self.observed + self.hidden


@dataclass(frozen=True)
class MeasurementSample:
    """One timestamp of stacked current and voltage phasors at observed nodes."""

    z: np.ndarray
    noise_sigma: float = 0.0


def _sigma_min(rows: np.ndarray) -> float:
    return float(np.linalg.svd(rows, compute_uv=False)[-1])


def place_pmus(basis: GftBasis, k_freqs: int, m: int) -> PlacementResult:
    """Greedy forward selection maximizing the smallest singular value of the
    selected rows of the first ``k_freqs`` eigenvectors.

    Ties are broken by the lowest node index. Needs m >= k_freqs for a
    nonzero final score.
    """
    n = basis.eigvecs.shape[0]
    if not 0 < k_freqs <= n:
        raise ValueError(f"k_freqs must be in [1, {n}]")
    if m > n:
        raise ValueError(f"m={m} exceeds node count {n}")
    if m < 1:
        raise ValueError("m must be positive")
    u_k = basis.eigvecs[:, :k_freqs]
    selected: list[int] = []
    remaining = list(range(n))
    for _ in range(m):
        best_node, best_score = None, -np.inf
        for cand in remaining:
            score = _sigma_min(u_k[selected + [cand], :])
            if score > best_score + 1e-15:
                best_node, best_score = cand, score
        selected.append(best_node)
        remaining.remove(best_node)
    return PlacementResult(tuple(selected), _sigma_min(u_k[selected, :]))


def exhaustive_pmus(basis: GftBasis, k_freqs: int, m: int) -> PlacementResult:
    """Brute-force optimum over all size-m subsets; only for tiny graphs."""
    from itertools import combinations

    n = basis.eigvecs.shape[0]
    u_k = basis.eigvecs[:, :k_freqs]
    best, best_score = None, -np.inf
    for subset in combinations(range(n), m):
        score = _sigma_min(u_k[list(subset), :])
        if score > best_score:
            best, best_score = subset, score
    return PlacementResult(tuple(best), best_score)


def build_measurement_model(y: np.ndarray, observed) -> MeasurementModel:
    """Stacked model rows: net currents at observed nodes, then voltages.

    h = [[Y_oo, Y_oh], [I, 0]] over the reordered state [v_obs; v_hidden].
    """
    observed = tuple(int(i) for i in observed)
    if not observed:
        raise ValueError("observed set is empty")
    n = y.shape[0]
    if len(set(observed)) != len(observed):
        raise ValueError("observed set has duplicates")
    if any(i < 0 or i >= n for i in observed):
        raise ValueError(f"observed node index out of range [0, {n})")
    hidden = tuple(i for i in range(n) if i not in set(observed))
    mo = len(observed)
    h = np.zeros((2 * mo, n), dtype=complex)
    h[:mo, :mo] = y[np.ix_(observed, observed)]
    h[:mo, mo:] = y[np.ix_(observed, hidden)]
    h[mo:, :mo] = np.eye(mo)
    return MeasurementModel(h=h, observed=observed, hidden=hidden)


def measure(op_v: np.ndarray, y: np.ndarray, observed, noise_sigma: float = 0.0,
            rng: np.random.Generator | None = None) -> MeasurementSample:
    """Stack [i_obs; v_obs] from a voltage state, optionally with independent
    complex Gaussian noise of the given per-channel standard deviation."""
    observed = list(observed)
    i_full = y @ op_v
    z = np.concatenate([i_full[observed], op_v[observed]])
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("rng required when noise_sigma > 0")
        noise = rng.normal(0.0, noise_sigma / np.sqrt(2), (len(z), 2))
        z = z + noise[:, 0] + 1j * noise[:, 1]
    return MeasurementSample(z=z, noise_sigma=noise_sigma)


def objective(z: np.ndarray, h: np.ndarray, x: np.ndarray,
              reg: np.ndarray, mu1: float) -> float:
    """Regularized least squares objective ||z - Hx||^2 + mu1 x^H R x."""
    r = z - h @ x
    return float(np.real(np.vdot(r, r)) + mu1 * np.real(np.vdot(x, reg @ x)))


def recover_state(
    z: MeasurementSample | np.ndarray,
    model: MeasurementModel,
    reg: np.ndarray | None = None,
    mu1: float = 1e-6,
) -> np.ndarray:
    """Closed-form regularized recovery of the full complex voltage vector.

    x_hat = pinv(H^H H + mu1 R) H^H z, returned in GLOBAL node order.
    ``reg`` is a real symmetric matrix in global node order (typically the
    real shift operator block); it is permuted internally to the model's
    column order. The pseudo-inverse rank cutoff is the standard
    max_dim * eps * sigma_max.
    """
    if mu1 < 0:
        raise ValueError("mu1 must be nonnegative")
    zv = z.z if isinstance(z, MeasurementSample) else np.asarray(z)
    h = model.h
    if zv.shape != (h.shape[0],):
        raise ValueError(f"measurement length {zv.shape} != model rows {h.shape[0]}")
    n = h.shape[1]
    a = h.conj().T @ h
    if mu1 > 0:
        if reg is None:
            raise ValueError("reg matrix required when mu1 > 0")
        perm = np.array(model.column_order)
        a = a + mu1 * reg[np.ix_(perm, perm)]

    sv = np.linalg.svd(a, compute_uv=False)
    cutoff = n * np.finfo(float).eps * sv[0]
    rank = int(np.sum(sv > cutoff))
    if rank < n:
        warnings.warn(
            f"recovery model rank {rank} < dimension {n}; "
            "pseudo-inverse picks the minimum-norm solution",
            stacklevel=2,
        )
    x_cols = np.linalg.pinv(a, rcond=n * np.finfo(float).eps, hermitian=True) @ (
        h.conj().T @ zv
    )
    # back to global node order
    x = np.empty(n, dtype=complex)
    x[np.array(model.column_order)] = x_cols
    return x
