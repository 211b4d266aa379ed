"""Minimal neural-network substrate: the residual MLP used across the repo
(three 512-wide hidden layers, LeakyReLU slope 0.01, input embedding added
back before the output head), reverse-mode gradients, AdamW, Sobol sampling
and min-max input scaling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from ._backend import NUMBA_ENABLED

LEAKY_SLOPE = 0.01
HIDDEN_WIDTH = 512

PARAM_NAMES = ("w_embed", "w1", "b1", "w2", "b2", "w3", "b3", "w_out", "b_out")


def leaky_relu(x):
    return np.where(x >= 0.0, x, LEAKY_SLOPE * x)


def _leaky_grad(pre):
    dt = pre.dtype if hasattr(pre, "dtype") else np.dtype(float)
    return np.where(pre >= 0.0, dt.type(1.0), dt.type(LEAKY_SLOPE))


@dataclass
class MlpModel:
    """Residual MLP: embed -> 3x(affine + LeakyReLU) -> +embed -> head."""

    n_in: int
    n_out: int
    hidden: int = HIDDEN_WIDTH
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, n_in: int, n_out: int, seed: int, hidden: int = HIDDEN_WIDTH,
             dtype=np.float32) -> "MlpModel":
        """Kaiming-uniform weights for the LeakyReLU activation, zero biases.

        float32 is the production dtype (training is memory-bound on this
        class of hardware); gradient-check tests build float64 instances.
        """
        rng = np.random.default_rng(seed)

        def kaiming(fan_in, fan_out):
            bound = np.sqrt(6.0 / ((1.0 + LEAKY_SLOPE ** 2) * fan_in))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)

        params = {
            "w_embed": kaiming(n_in, hidden),
            "w1": kaiming(hidden, hidden), "b1": np.zeros(hidden, dtype),
            "w2": kaiming(hidden, hidden), "b2": np.zeros(hidden, dtype),
            "w3": kaiming(hidden, hidden), "b3": np.zeros(hidden, dtype),
            "w_out": kaiming(hidden, n_out), "b_out": np.zeros(n_out, dtype),
        }
        return cls(n_in=n_in, n_out=n_out, hidden=hidden, params=params)

    @property
    def dtype(self):
        return self.params["w_embed"].dtype

    # -- evaluation ----------------------------------------------------------

    def _forward_row(self, x):
        p = self.params
        e = x @ p["w_embed"]
        h = leaky_relu(e @ p["w1"] + p["b1"])
        h = leaky_relu(h @ p["w2"] + p["b2"])
        h = leaky_relu(h @ p["w3"] + p["b3"])
        return (h + e) @ p["w_out"] + p["b_out"]

    def forward(self, x):
        """Deterministic evaluation; identical results whether a sample is
        evaluated alone or as a row of a batch (rows are computed one by one)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            if x.shape[0] != self.n_in:
                raise ValueError(f"expected input dim {self.n_in}, got {x.shape[0]}")
            return self._forward_row(x)
        if x.shape[1] != self.n_in:
            raise ValueError(f"expected input dim {self.n_in}, got {x.shape[1]}")
        out = np.empty((x.shape[0], self.n_out))
        for i in range(x.shape[0]):
            out[i] = self._forward_row(x[i])
        return out

    # -- training path (batched GEMM; may differ from forward() in the last ulp)

    def forward_train(self, x):
        p = self.params
        x = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        e = x @ p["w_embed"]
        a1 = e @ p["w1"] + p["b1"]
        h1 = leaky_relu(a1)
        a2 = h1 @ p["w2"] + p["b2"]
        h2 = leaky_relu(a2)
        a3 = h2 @ p["w3"] + p["b3"]
        h3 = leaky_relu(a3)
        z = h3 + e
        y = z @ p["w_out"] + p["b_out"]
        cache = (x, e, a1, h1, a2, h2, a3, z)
        return y, cache

    def backward(self, cache, d_y):
        """Exact reverse-mode gradients of a scalar loss given dL/dy."""
        p = self.params
        x, e, a1, h1, a2, h2, a3, z = cache
        d_y = np.atleast_2d(np.asarray(d_y, dtype=self.dtype))
        grads = {}
        grads["w_out"] = z.T @ d_y
        grads["b_out"] = d_y.sum(axis=0)
        dz = d_y @ p["w_out"].T
        da3 = dz * _leaky_grad(a3)
        grads["w3"] = h2.T @ da3
        grads["b3"] = da3.sum(axis=0)
        dh2 = da3 @ p["w3"].T
        da2 = dh2 * _leaky_grad(a2)
        grads["w2"] = h1.T @ da2
        grads["b2"] = da2.sum(axis=0)
        dh1 = da2 @ p["w2"].T
        da1 = dh1 * _leaky_grad(a1)
        grads["w1"] = e.T @ da1
        grads["b1"] = da1.sum(axis=0)
        de = da1 @ p["w1"].T + dz  # hidden path plus residual path
        grads["w_embed"] = x.T @ de
        return grads


@dataclass
class AdamWState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, **hyper) -> "AdamWState":
        state = cls(**hyper)
        state.m = {k: np.zeros_like(v) for k, v in params.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.items()}
        return state


def _adamw_flat_impl(p, g, m, v, lr, b1, b2, eps, wd, bc1, bc2):
    inv_bc1 = 1.0 / bc1
    inv_bc2 = 1.0 / bc2
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * ((mi * inv_bc1) / (np.sqrt(vi * inv_bc2) + eps) + wd * p[i])


if NUMBA_ENABLED:
    import numba

    _adamw_flat = numba.njit(cache=True, fastmath=True)(_adamw_flat_impl)
else:
    def _adamw_flat(p, g, m, v, lr, b1, b2, eps, wd, bc1, bc2):
        # vectorized in-place fallback of the same update
        np.multiply(m, b1, out=m)
        m += (1.0 - b1) * g
        np.multiply(v, b2, out=v)
        v += (1.0 - b2) * g * g
        denom = np.sqrt(v / bc2)
        denom += eps
        p -= lr * ((m / bc1) / denom + wd * p)


def adamw_step(state: AdamWState, params: dict, grads: dict) -> AdamWState:
    """Decoupled-weight-decay Adam update, in place on `params`."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        _adamw_flat(p.reshape(-1), grads[k].reshape(-1),
                    state.m[k].reshape(-1), state.v[k].reshape(-1),
                    p.dtype.type(state.lr), p.dtype.type(state.beta1),
                    p.dtype.type(state.beta2), p.dtype.type(state.eps),
                    p.dtype.type(state.weight_decay), p.dtype.type(bc1), p.dtype.type(bc2))
    return state


def sobol_sample(dim: int, n: int, offset: int = 0) -> np.ndarray:
    """n Sobol points in [0, 1)^dim, starting `offset` points into the stream.

    The all-zeros leading element of the raw sequence is skipped, so the
    first returned point of the 1-D stream is 0.5.
    """
    if dim > 64:
        raise ValueError("sobol_sample supports dim <= 64")
    sampler = qmc.Sobol(d=dim, scramble=False)
    sampler.fast_forward(1 + offset)
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*balance properties.*")
        return sampler.random(n)


class Scaler:
    """Per-dimension min-max scaling onto [0, 1]."""

    def __init__(self, mins, maxs):
        self.mins = np.asarray(mins, float)
        self.maxs = np.asarray(maxs, float)
        if np.any(self.maxs <= self.mins):
            bad = np.flatnonzero(self.maxs <= self.mins)
            raise ValueError(f"scaler dimensions {bad.tolist()} have max <= min")
        self.width = self.maxs - self.mins

    def scale(self, x):
        return (np.asarray(x, float) - self.mins) / self.width

    def unscale(self, u):
        return np.asarray(u, float) * self.width + self.mins


def numeric_gradient(loss_fn, params: dict, h: float = 1e-5, rng=None, n_probe=None):
    """Central-difference gradients of loss_fn(params); optionally only on a
    random subset of coordinates (returned as (key, index, value) triples)."""
    out = []
    for k, p in params.items():
        flat = p.reshape(-1)
        idxs = range(flat.size)
        if n_probe is not None:
            idxs = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        for i in idxs:
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            dn = loss_fn()
            flat[i] = old
            out.append((k, int(i), (up - dn) / (2.0 * h)))
    return out


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: MlpModel, *, scalers: dict | None = None,
                    opt: AdamWState | None = None, extra: dict | None = None):
    """Single-file npz container: dims, row-major parameter arrays, scaler
    ranges and optimizer state (little-endian on this platform)."""
    payload = {
        "format_version": np.array([CHECKPOINT_VERSION]),
        "dims": np.array([model.n_in, model.hidden, model.n_out]),
    }
    for k, v in model.params.items():
        payload[f"param_{k}"] = np.ascontiguousarray(v)
    for name, sc in (scalers or {}).items():
        payload[f"scaler_{name}_min"] = sc.mins
        payload[f"scaler_{name}_max"] = sc.maxs
    if opt is not None:
        payload["opt_hyper"] = np.array([opt.lr, opt.beta1, opt.beta2, opt.eps,
                                         opt.weight_decay, float(opt.t)])
        for k in model.params:
            payload[f"opt_m_{k}"] = opt.m[k]
            payload[f"opt_v_{k}"] = opt.v[k]
    for k, v in (extra or {}).items():
        payload[f"extra_{k}"] = np.asarray(v)
    np.savez(path, **payload)


def load_checkpoint(path):
    """Returns (model, scalers, opt_state_or_None, extra)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        n_in, hidden, n_out = (int(v) for v in data["dims"])
        params = {k: data[f"param_{k}"].copy() for k in PARAM_NAMES}
        model = MlpModel(n_in=n_in, n_out=n_out, hidden=hidden, params=params)
        scalers = {}
        for key in data.files:
            if key.startswith("scaler_") and key.endswith("_min"):
                name = key[len("scaler_"):-len("_min")]
                scalers[name] = Scaler(data[key], data[f"scaler_{name}_max"])
        opt = None
        if "opt_hyper" in data.files:
            lr, b1, b2, eps, wd, t = data["opt_hyper"]
            opt = AdamWState(lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd, t=int(t))
            opt.m = {k: data[f"opt_m_{k}"].copy() for k in PARAM_NAMES}
            opt.v = {k: data[f"opt_v_{k}"].copy() for k in PARAM_NAMES}
        extra = {k[len("extra_"):]: data[k].copy() for k in data.files if k.startswith("extra_")}
    return model, scalers, opt, extra
