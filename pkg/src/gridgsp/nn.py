"""Graph-convolutional and graph-recurrent networks over a fixed shift operator.

Both architectures share the head: the feature layer keeps node structure
with F channels, is flattened through ReLU dense layers and finished by a
tanh output that a fixed affine map rescales to physical units.

GCN feature layer: per graph order k, a learned temporal combination of the
window is shifted k times by S and mixed into channels; GRN instead carries a
per-node recurrent state across the window frames. Channel mixing is applied
after graph shifting throughout.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FORMAT_VERSION = 1


def operator_fingerprint(s: np.ndarray) -> str:
    """sha256 of the operator bytes; stored with checkpoints to catch reuse
    against a different graph."""
    s = np.ascontiguousarray(np.asarray(s, dtype=np.float64))
    h = hashlib.sha256()
    h.update(str(s.shape).encode())
    h.update(s.tobytes())
    return h.hexdigest()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


def default_scaling(out_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Affine map from tanh range onto [phi; |v|] physical ranges: angles in
    [-0.5, 0.5] rad, magnitudes in [0.5, 1.5] p.u. For outputs that are not
    an even [phi; |v|] stack the map is neutral (center 0, half-range 1)."""
    if out_dim % 2:
        return np.zeros(out_dim), np.ones(out_dim)
    half_n = out_dim // 2
    center = np.concatenate([np.zeros(half_n), np.ones(half_n)])
    half = np.full(out_dim, 0.5)
    return center, half


def _shift_powers(x: Tensor, s: np.ndarray, order: int) -> list[Tensor]:
    """[x, x S, x S^2, ...] for row-major batched signals (S symmetric)."""
    out = [x]
    for _ in range(order):
        out.append(out[-1] @ s)
    return out


class _DenseHead:
    """Shared ReLU stack plus tanh output with affine rescaling."""

    def __init__(self, rng, in_dim, hidden_dims, out_dim, center, half):
        self.weights = []
        self.biases = []
        prev = in_dim
        for hdim in hidden_dims:
            self.weights.append(Tensor(glorot(rng, prev, hdim, (prev, hdim)), True))
            self.biases.append(Tensor(np.zeros(hdim), True))
            prev = hdim
        self.w_out = Tensor(glorot(rng, prev, out_dim, (prev, out_dim)), True)
        self.b_out = Tensor(np.zeros(out_dim), True)
        self.center = np.asarray(center, float)
        self.half = np.asarray(half, float)

    def params(self):
        return [*self.weights, *self.biases, self.w_out, self.b_out]

    def hidden(self, flat: Tensor) -> Tensor:
        h = flat
        for w, b in zip(self.weights, self.biases):
            h = (h @ w + b).relu()
        return h

    def raw(self, flat: Tensor) -> Tensor:
        return (self.hidden(flat) @ self.w_out + self.b_out).tanh()

    def __call__(self, flat: Tensor) -> Tensor:
        return Tensor(self.center) + Tensor(self.half) * self.raw(flat)


class GcnModel:
    """Spatio-temporal graph convolutional regressor.

    Parameters: temporal weights h (K+1, T), channel mixers theta (K+1, F),
    feature bias (F,), dense stack, output layer. ``n_sig`` is the signal
    dimension the operator acts on; the output dimension defaults to it.
    """

    kind = "gcn"

    def __init__(
        self,
        n_sig: int,
        order: int = 2,
        t_window: int = 10,
        channels: int = 10,
        hidden_dims=(512,),
        out_dim: int | None = None,
        scaling: tuple | None = None,
        seed: int = 0,
    ):
        self.n_sig = n_sig
        self.order = order
        self.t_window = t_window
        self.channels = channels
        self.hidden_dims = tuple(hidden_dims)
        self.out_dim = n_sig if out_dim is None else out_dim
        rng = np.random.default_rng(seed)
        k1 = order + 1
        self.h = Tensor(np.full((k1, t_window), 1.0 / (t_window * k1)), True)
        self.theta = Tensor(glorot(rng, k1, channels, (k1, channels)), True)
        self.b_feat = Tensor(np.zeros(channels), True)
        if scaling is None:
            scaling = default_scaling(self.out_dim)
        self.head = _DenseHead(
            rng, n_sig * channels, hidden_dims, self.out_dim, *scaling
        )

    def params(self):
        return [self.h, self.theta, self.b_feat, *self.head.params()]

    def feature(self, window: np.ndarray, s: np.ndarray) -> Tensor:
        """ReLU feature layer, shape (batch, n_sig, channels)."""
        x = np.asarray(window, float)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        b, t_w, n = x.shape
        if t_w != self.t_window or n != self.n_sig:
            raise ValueError(
                f"window shape {(t_w, n)}, expected {(self.t_window, self.n_sig)}"
            )
        # frames newest-first so coefficient t weights the frame t steps back
        xr = Tensor(np.ascontiguousarray(x[:, ::-1, :]))
        combos = []
        for k in range(self.order + 1):
            hk = self.h[k].reshape(self.t_window, 1)
            combos.append((xr * hk).sum(axis=1))  # (b, n)
        shifted = [
            _shift_powers(zk, s, k)[k] for k, zk in enumerate(combos)
        ]
        stack = ad.stack_last(shifted)  # (b, n, K+1)
        feat = (stack @ self.theta + self.b_feat).relu()
        return feat

    def forward(self, window, s, raw: bool = False) -> Tensor:
        feat = self.feature(window, s)
        b = feat.shape[0]
        flat = feat.reshape(b, self.n_sig * self.channels)
        out = self.head.raw(flat) if raw else self.head(flat)
        return out

    def config(self) -> dict:
        return {
            "n_sig": self.n_sig,
            "order": self.order,
            "t_window": self.t_window,
            "channels": self.channels,
            "hidden_dims": list(self.hidden_dims),
            "out_dim": self.out_dim,
        }


class GrnModel:
    """Graph-recurrent regressor: per-node recurrent channels over the window."""

    kind = "grn"

    def __init__(
        self,
        n_sig: int,
        order: int = 2,
        t_window: int = 10,
        channels: int = 10,
        hidden_dims=(512,),
        out_dim: int | None = None,
        scaling: tuple | None = None,
        seed: int = 0,
    ):
        self.n_sig = n_sig
        self.order = order
        self.t_window = t_window
        self.channels = channels
        self.hidden_dims = tuple(hidden_dims)
        self.out_dim = n_sig if out_dim is None else out_dim
        rng = np.random.default_rng(seed)
        k1 = order + 1
        self.h = Tensor(np.full(k1, 1.0 / k1), True)
        self.theta_in = Tensor(glorot(rng, 1, channels, (1, channels)), True)
        self.theta_rec = Tensor(
            glorot(rng, channels, channels, (channels, channels)), True
        )
        self.b_rec = Tensor(np.zeros(channels), True)
        if scaling is None:
            scaling = default_scaling(self.out_dim)
        self.head = _DenseHead(
            rng, n_sig * channels, hidden_dims, self.out_dim, *scaling
        )

    def params(self):
        return [
            self.h,
            self.theta_in,
            self.theta_rec,
            self.b_rec,
            *self.head.params(),
        ]

    def feature(self, window: np.ndarray, s: np.ndarray) -> Tensor:
        """Recurrent state after the last frame, shape (batch, n_sig, channels)."""
        x = np.asarray(window, float)
        if x.ndim == 2:
            x = x[None]
        b, t_w, n = x.shape
        if t_w != self.t_window or n != self.n_sig:
            raise ValueError(
                f"window shape {(t_w, n)}, expected {(self.t_window, self.n_sig)}"
            )
        state = Tensor(np.zeros((b, n, self.channels)))
        for t in range(t_w):
            xt = Tensor(x[:, t, :])
            powers = _shift_powers(xt, s, self.order)
            g = powers[0] * self.h[0]
            for k in range(1, self.order + 1):
                g = g + powers[k] * self.h[k]
            drive = g.reshape(b, n, 1) @ self.theta_in
            state = (drive + state @ self.theta_rec + self.b_rec).relu()
        return state

    def forward(self, window, s, raw: bool = False) -> Tensor:
        feat = self.feature(window, s)
        b = feat.shape[0]
        flat = feat.reshape(b, self.n_sig * self.channels)
        out = self.head.raw(flat) if raw else self.head(flat)
        return out

    config = GcnModel.config


def gcn_forward(model: GcnModel, window, s: np.ndarray) -> np.ndarray:
    """Physical-units forward pass as plain arrays (single window or batch)."""
    out = model.forward(window, s).data
    return out[0] if np.asarray(window).ndim == 2 else out


def grn_forward(model: GrnModel, window, s: np.ndarray) -> np.ndarray:
    out = model.forward(window, s).data
    return out[0] if np.asarray(window).ndim == 2 else out


def _param_dict(model) -> dict[str, Tensor]:
    named = {}
    if model.kind == "gcn":
        named.update(h=model.h, theta=model.theta, b_feat=model.b_feat)
    else:
        named.update(
            h=model.h,
            theta_in=model.theta_in,
            theta_rec=model.theta_rec,
            b_rec=model.b_rec,
        )
    for i, (w, b) in enumerate(zip(model.head.weights, model.head.biases)):
        named[f"dense{i}_w"] = w
        named[f"dense{i}_b"] = b
    named["out_w"] = model.head.w_out
    named["out_b"] = model.head.b_out
    return named


def save_checkpoint(path, model, s: np.ndarray, extra: dict | None = None) -> None:
    """Versioned JSON checkpoint: config, scaling, parameters, S fingerprint."""
    doc = {
        "format": "gridgsp-checkpoint",
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "config": model.config(),
        "scaling": {
            "center": model.head.center.tolist(),
            "half": model.head.half.tolist(),
        },
        "gso_sha256": operator_fingerprint(s),
        "params": {k: v.data.tolist() for k, v in _param_dict(model).items()},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, s: np.ndarray | None = None):
    """Load a checkpoint; if ``s`` is given, verify its fingerprint matches."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "gridgsp-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    if doc["version"] > FORMAT_VERSION:
        raise ValueError(f"checkpoint version {doc['version']} is newer than {FORMAT_VERSION}")
    if s is not None:
        fp = operator_fingerprint(s)
        if fp != doc["gso_sha256"]:
            raise ValueError(
                "checkpoint was trained against a different shift operator"
            )
    cfg = doc["config"]
    scaling = (
        np.asarray(doc["scaling"]["center"]),
        np.asarray(doc["scaling"]["half"]),
    )
    cls = GcnModel if doc["kind"] == "gcn" else GrnModel
    model = cls(
        n_sig=cfg["n_sig"],
        order=cfg["order"],
        t_window=cfg["t_window"],
        channels=cfg["channels"],
        hidden_dims=cfg["hidden_dims"],
        out_dim=cfg["out_dim"],
        scaling=scaling,
    )
    for name, tensor in _param_dict(model).items():
        tensor.data = np.asarray(doc["params"][name], dtype=np.float64).reshape(
            tensor.data.shape
        )
    return model
