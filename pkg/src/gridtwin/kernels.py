"""Hot inference kernels with numba and pure-numpy twin implementations.

The surrogate's transition path evaluates the three 512-wide networks per
step; that is the dominant cost of vectorized rollouts, so it gets a fused
float32 kernel.  Rows are computed independently in both twins, which makes
batched evaluation bit-identical to a loop of single-sample evaluations
within either backend.  `gridtwin bench --kernels` compares the two.
"""

from __future__ import annotations

import numpy as np

from ._backend import NUMBA_ENABLED
from .nn_core import LEAKY_SLOPE, MlpModel


def pack_f32(model: MlpModel):
    """Contiguous float32 copies of the parameters, in forward order."""
    p = model.params
    return tuple(np.ascontiguousarray(p[k], dtype=np.float32) for k in
                 ("w_embed", "w1", "b1", "w2", "b2", "w3", "b3", "w_out", "b_out"))


def _mlp_rows_numpy(x, we, w1, b1, w2, b2, w3, b3, wo, bo, out):
    slope = np.float32(LEAKY_SLOPE)
    for i in range(x.shape[0]):
        e = x[i] @ we
        h = e @ w1 + b1
        h = np.where(h >= 0, h, slope * h)
        h = h @ w2 + b2
        h = np.where(h >= 0, h, slope * h)
        h = h @ w3 + b3
        h = np.where(h >= 0, h, slope * h)
        out[i] = (h + e) @ wo + bo


if NUMBA_ENABLED:
    from numba import njit, prange

    @njit(cache=True, parallel=True, fastmath=True)
    def _mlp_rows_numba(x, we, w1, b1, w2, b2, w3, b3, wo, bo, out):  # pragma: no cover
        n = x.shape[0]
        n_in = we.shape[0]
        hid = we.shape[1]
        n_out = wo.shape[1]
        slope = np.float32(LEAKY_SLOPE)
        for i in prange(n):
            e = np.zeros(hid, np.float32)
            for t in range(n_in):
                xv = x[i, t]
                for j in range(hid):
                    e[j] += xv * we[t, j]
            h = b1.copy()
            for t in range(hid):
                xv = e[t]
                for j in range(hid):
                    h[j] += xv * w1[t, j]
            for j in range(hid):
                if h[j] < 0.0:
                    h[j] *= slope
            h2 = b2.copy()
            for t in range(hid):
                xv = h[t]
                for j in range(hid):
                    h2[j] += xv * w2[t, j]
            for j in range(hid):
                if h2[j] < 0.0:
                    h2[j] *= slope
            h3 = b3.copy()
            for t in range(hid):
                xv = h2[t]
                for j in range(hid):
                    h3[j] += xv * w3[t, j]
            for j in range(hid):
                if h3[j] < 0.0:
                    h3[j] *= slope
                h3[j] += e[j]
            for j in range(n_out):
                acc = bo[j]
                for t in range(hid):
                    acc += h3[t] * wo[t, j]
                out[i, j] = acc

    _mlp_rows = _mlp_rows_numba
else:
    _mlp_rows = _mlp_rows_numpy


def mlp_infer_f32(packed, x32: np.ndarray) -> np.ndarray:
    """Row-independent float32 forward pass over packed parameters."""
    out = np.empty((x32.shape[0], packed[-1].shape[0]), np.float32)
    _mlp_rows(x32, *packed, out)
    return out


def kernel_variants():
    """(name, numpy_fn, numba_fn_or_None) triples for the backend benchmark."""
    numba_fn = _mlp_rows_numba if NUMBA_ENABLED else None
    return [("mlp_infer_f32", _mlp_rows_numpy, numba_fn)]
