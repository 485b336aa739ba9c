"""Graph Fourier transform and polynomial / spatio-temporal graph filters.

All routines work on any symmetric real shift operator. Filters are applied
by iterated mat-vec (Horner form), never by forming dense operator powers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GftBasis:
    """Orthonormal eigenbasis of a symmetric shift operator.

    Columns of ``eigvecs`` follow ascending ``eigvals``; each eigenvector's
    largest-magnitude entry is made positive (ties broken by first index) so
    the basis is deterministic.
    """

    eigvecs: np.ndarray
    eigvals: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.eigvals[-1])

    def transform(self, x: np.ndarray) -> np.ndarray:
        return self.eigvecs.T @ x

    def inverse(self, xt: np.ndarray) -> np.ndarray:
        return self.eigvecs @ xt


@dataclass(frozen=True)
class PolynomialFilter:
    """h(S) = sum_k coeffs[k] S^k."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.atleast_1d(np.asarray(self.coeffs, float)))

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def transfer(self, lam: np.ndarray) -> np.ndarray:
        """Scalar transfer function evaluated at graph frequencies."""
        return np.polyval(self.coeffs[::-1], lam)


@dataclass(frozen=True)
class SpatioTemporalFilter:
    """coeffs[k, t]: weight of S^k applied to the frame t steps back."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, float))
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def memory(self) -> int:
        return self.coeffs.shape[1]

    def transfer(self, lam: np.ndarray, z: complex) -> np.ndarray:
        """Joint transfer function H(lam, z) = sum_{k,t} c[k,t] lam^k z^-t."""
        lam = np.asarray(lam)
        out = np.zeros(lam.shape, dtype=complex)
        for k in range(self.coeffs.shape[0]):
            hz = sum(
                self.coeffs[k, t] * z ** (-t) for t in range(self.coeffs.shape[1])
            )
            out += hz * lam**k
        return out


def gft(s: np.ndarray) -> GftBasis:
    """Eigendecomposition of a symmetric shift operator with fixed signs."""
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected square matrix, got {s.shape}")
    asym = np.max(np.abs(s - s.T)) if s.size else 0.0
    if asym > 1e-10:
        raise ValueError(f"matrix not symmetric: max asymmetry {asym:.3g}")
    lam, u = np.linalg.eigh(0.5 * (s + s.T))
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
    return GftBasis(eigvecs=u, eigvals=lam)


def apply_filter(f: PolynomialFilter, s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate h(S) x by Horner iteration: w <- S w + h_k x."""
    x = np.asarray(x, dtype=float)
    if s.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: S {s.shape} vs x {x.shape}")
    c = f.coeffs
    w = c[-1] * x
    for k in range(len(c) - 2, -1, -1):
        w = s @ w + c[k] * x
    return w


def apply_st_filter(
    f: SpatioTemporalFilter, s: np.ndarray, window: np.ndarray
) -> np.ndarray:
    """Spatio-temporal filter output at the window's last frame.

    ``window`` has shape (T_w, n) with frames in chronological order; frame
    ``window[-1 - tau]`` is weighted by coeffs[k, tau] under S^k. Requires
    T_w >= the filter memory.
    """
    window = np.asarray(window, dtype=float)
    if window.ndim != 2:
        raise ValueError("window must be (frames, nodes)")
    kmax, tmem = f.coeffs.shape
    if window.shape[0] < tmem:
        raise ValueError(
            f"window of {window.shape[0]} frames shorter than filter memory {tmem}"
        )
    if s.shape[1] != window.shape[1]:
        raise ValueError(f"dimension mismatch: S {s.shape} vs frames {window.shape}")
    # temporal contraction per graph order, then one Horner pass in S
    zs = [
        sum(f.coeffs[k, t] * window[-1 - t] for t in range(tmem))
        for k in range(kmax)
    ]
    w = zs[-1]
    for k in range(kmax - 2, -1, -1):
        w = s @ w + zs[k]
    return w


def save_spectrum(path, basis: GftBasis, signal: np.ndarray | None = None) -> None:
    """CSV of graph frequencies (and optionally a signal's GFT coefficients)."""
    with open(path, "w") as fh:
        if signal is None:
            fh.write("index,eigenvalue\n")
            for i, lam in enumerate(basis.eigvals):
                fh.write(f"{i},{lam:.17g}\n")
        else:
            coef = basis.transform(np.asarray(signal, float))
            fh.write("index,eigenvalue,coefficient\n")
            for i, (lam, c) in enumerate(zip(basis.eigvals, coef)):
                fh.write(f"{i},{lam:.17g},{c:.17g}\n")


def rescale_operator(s: np.ndarray, lambda_max: float | None = None) -> np.ndarray:
    """Spectral rescale 2 S / lambda_max - I used to condition filter stacks."""
    s = np.asarray(s, dtype=float)
    if lambda_max is None:
        lambda_max = gft(s).lambda_max
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    return 2.0 * s / lambda_max - np.eye(s.shape[0])
