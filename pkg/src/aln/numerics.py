"""Dense float64 matrix primitives with explicit backward rules, plus Adam.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64; rows are
frames (time steps) and a single vector is a ``1 x n`` row.  Every layer used
by the model has a forward function and a matching backward function that
takes the upstream gradient and returns gradients for its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionError, EmptyInputError, LabelError, NumericFaultError

GRU_KEYS = ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh")


def as_matrix(data, *, name: str = "matrix") -> np.ndarray:
    """Convert user input to a finite float64 matrix (1-D input becomes one row)."""
    m = np.array(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D matrix, got {m.ndim} dimensions")
    if not np.all(np.isfinite(m)):
        raise NumericFaultError(f"{name}: contains NaN or infinite values")
    return m


def _shape(m) -> str:
    return "x".join(str(s) for s in np.shape(m))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {_shape(a)} by {_shape(b)}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax_rows(m: np.ndarray) -> np.ndarray:
    if m.size == 0:
        raise EmptyInputError("softmax_rows: empty matrix")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(weights: np.ndarray, d_weights: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the scores given the softmax output and its upstream gradient."""
    inner = np.sum(d_weights * weights, axis=1, keepdims=True)
    return weights * (d_weights - inner)


def mean_pool(seq: np.ndarray) -> np.ndarray:
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptyInputError("mean_pool: sequence has no frames")
    return seq.mean(axis=0, keepdims=True)


def mean_pool_backward(d_pooled: np.ndarray, n_rows: int) -> np.ndarray:
    return np.repeat(d_pooled / n_rows, n_rows, axis=0)


def max_pool(seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise maximum over frames.

    Returns ``(pooled, argmax)``; ``argmax[j]`` is the row that won column j.
    ``np.argmax`` picks the first occurrence, so ties resolve to the lowest row.
    """
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptyInputError("max_pool: sequence has no frames")
    idx = np.argmax(seq, axis=0)
    return seq[idx, np.arange(seq.shape[1])].reshape(1, -1), idx


def max_pool_backward(d_pooled: np.ndarray, argmax: np.ndarray, n_rows: int) -> np.ndarray:
    grad = np.zeros((n_rows, argmax.shape[0]))
    grad[argmax, np.arange(argmax.shape[0])] = d_pooled.ravel()
    return grad


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ w + b`` with the bias row broadcast over frames."""
    w = getattr(w, "value", w)
    b = getattr(b, "value", b)
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: input {_shape(x)} does not fit weight {_shape(w)}")
    if b.size != w.shape[1]:
        raise DimensionError(f"linear: bias {_shape(b)} does not fit weight {_shape(w)}")
    return x @ w + b.reshape(1, -1)


def linear_backward(x: np.ndarray, w: np.ndarray, d_out: np.ndarray):
    """Return ``(dx, dw, db)`` for ``x @ w + b``."""
    return d_out @ w.T, x.T @ d_out, d_out.sum(axis=0, keepdims=True)


# --- GRU -------------------------------------------------------------------
#
# One layer, unidirectional, row-vector convention:
#   z_t = sig(x_t Wz + h_{t-1} Uz + bz)
#   r_t = sig(x_t Wr + h_{t-1} Ur + br)
#   c_t = tanh(x_t Wh + (r_t * h_{t-1}) Uh + bh)
#   h_t = (1 - z_t) * h_{t-1} + z_t * c_t


@dataclass
class GRUCache:
    seq: np.ndarray
    h_prev: np.ndarray  # T x H, h_{t-1} for each step
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray


def _check_gru(seq: np.ndarray, gru: Mapping[str, np.ndarray], h0: np.ndarray | None):
    missing = [k for k in GRU_KEYS if k not in gru]
    if missing:
        raise KeyError(f"gru parameter set is missing {missing}")
    d_in, hidden = gru["wz"].shape
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptyInputError("gru_forward: sequence has no frames")
    if seq.shape[1] != d_in:
        raise DimensionError(f"gru_forward: input {_shape(seq)} does not fit Wz {_shape(gru['wz'])}")
    for k in ("wr", "wh"):
        if gru[k].shape != (d_in, hidden):
            raise DimensionError(f"gru_forward: {k} has shape {_shape(gru[k])}, expected {d_in}x{hidden}")
    for k in ("uz", "ur", "uh"):
        if gru[k].shape != (hidden, hidden):
            raise DimensionError(f"gru_forward: {k} has shape {_shape(gru[k])}, expected {hidden}x{hidden}")
    for k in ("bz", "br", "bh"):
        if gru[k].size != hidden:
            raise DimensionError(f"gru_forward: {k} has shape {_shape(gru[k])}, expected 1x{hidden}")
    if h0 is None:
        return np.zeros((1, hidden))
    if h0.shape != (1, hidden):
        raise DimensionError(f"gru_forward: h0 is {_shape(h0)}, expected 1x{hidden}")
    return h0


def gru_forward_cached(seq, gru, h0=None) -> tuple[np.ndarray, GRUCache]:
    gru = {k: getattr(v, "value", v) for k, v in gru.items()}
    h = _check_gru(seq, gru, h0)
    n_steps, hidden = seq.shape[0], gru["wz"].shape[1]
    # input projections for all frames at once
    xz = seq @ gru["wz"] + gru["bz"].reshape(1, -1)
    xr = seq @ gru["wr"] + gru["br"].reshape(1, -1)
    xh = seq @ gru["wh"] + gru["bh"].reshape(1, -1)
    uz, ur, uh = gru["uz"], gru["ur"], gru["uh"]

    hs = np.empty((n_steps, hidden))
    h_prev = np.empty((n_steps, hidden))
    zs = np.empty((n_steps, hidden))
    rs = np.empty((n_steps, hidden))
    cs = np.empty((n_steps, hidden))
    h = h.ravel()
    for t in range(n_steps):
        z = sigmoid(xz[t] + h @ uz)
        r = sigmoid(xr[t] + h @ ur)
        c = np.tanh(xh[t] + (r * h) @ uh)
        h_prev[t] = h
        h = (1.0 - z) * h + z * c
        hs[t], zs[t], rs[t], cs[t] = h, z, r, c
    return hs, GRUCache(seq, h_prev, zs, rs, cs)


def gru_forward(seq: np.ndarray, gru: Mapping[str, np.ndarray], h0: np.ndarray | None = None) -> np.ndarray:
    """Run the GRU over ``seq`` (T x D) and return all hidden states (T x H)."""
    return gru_forward_cached(seq, gru, h0)[0]


def gru_backward(cache: GRUCache, gru, d_hs: np.ndarray):
    """Backpropagate through time.

    ``d_hs`` is the gradient w.r.t. every hidden state (T x H).  Returns
    ``(d_seq, grads)`` with ``grads`` keyed like the parameter set.  The
    initial state is treated as a constant.
    """
    gru = {k: getattr(v, "value", v) for k, v in gru.items()}
    uz, ur, uh = gru["uz"], gru["ur"], gru["uh"]
    h_prev, zs, rs, cs = cache.h_prev, cache.z, cache.r, cache.c
    n_steps, hidden = d_hs.shape
    d_az = np.empty((n_steps, hidden))
    d_ar = np.empty((n_steps, hidden))
    d_ah = np.empty((n_steps, hidden))
    carry = np.zeros(hidden)
    for t in range(n_steps - 1, -1, -1):
        dh = d_hs[t] + carry
        z, r, c, hp = zs[t], rs[t], cs[t], h_prev[t]
        dc = dh * z
        dz = dh * (c - hp)
        dnext = dh * (1.0 - z)
        dah = dc * (1.0 - c * c)
        drh = uh @ dah
        dr = drh * hp
        dnext += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dnext += uz @ daz + ur @ dar
        d_az[t], d_ar[t], d_ah[t] = daz, dar, dah
        carry = dnext

    seq = cache.seq
    grads = {
        "wz": seq.T @ d_az,
        "wr": seq.T @ d_ar,
        "wh": seq.T @ d_ah,
        "uz": h_prev.T @ d_az,
        "ur": h_prev.T @ d_ar,
        "uh": (rs * h_prev).T @ d_ah,
        "bz": d_az.sum(axis=0, keepdims=True),
        "br": d_ar.sum(axis=0, keepdims=True),
        "bh": d_ah.sum(axis=0, keepdims=True),
    }
    d_seq = d_az @ gru["wz"].T + d_ar @ gru["wr"].T + d_ah @ gru["wh"].T
    return d_seq, grads


# --- losses ----------------------------------------------------------------


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over all elements of the squared difference."""
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"mse: shapes {_shape(a)} and {_shape(b)} differ")
    d = np.asarray(a) - np.asarray(b)
    return float(np.mean(d * d))


def mse_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of ``mse(a, b)`` with respect to ``a``."""
    return 2.0 * (a - b) / a.size


def _check_label(logits: np.ndarray, label: int) -> None:
    k = logits.size
    if not (0 <= int(label) < k):
        raise LabelError(f"label {label} outside [0, {k})")


def cross_entropy(logits: np.ndarray, label: int) -> float:
    _check_label(logits, label)
    row = logits.ravel()
    mx = row.max()
    lse = mx + np.log(np.sum(np.exp(row - mx)))
    return float(lse - row[int(label)])


def cross_entropy_grad(logits: np.ndarray, label: int) -> np.ndarray:
    _check_label(logits, label)
    g = softmax_rows(logits.reshape(1, -1))
    g[0, int(label)] -= 1.0
    return g


# --- parameters and Adam ---------------------------------------------------


@dataclass
class ParamTensor:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    adam_m: np.ndarray = field(default=None, repr=False)
    adam_v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        if self.value.ndim != 2:
            raise DimensionError(f"parameter {self.name!r} must be 2-D, got {_shape(self.value)}")
        for attr in ("grad", "adam_m", "adam_v"):
            cur = getattr(self, attr)
            if cur is None:
                setattr(self, attr, np.zeros_like(self.value))
            elif np.shape(cur) != self.value.shape:
                raise DimensionError(f"parameter {self.name!r}: {attr} shape {_shape(cur)} != {_shape(self.value)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclass
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            # zero is allowed: it is the documented "no-op training" setting
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def adam_step(params: Iterable[ParamTensor], cfg: AdamConfig) -> None:
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericFaultError(f"non-finite gradient in parameter {p.name!r}")
    cfg.step_count += 1
    t = cfg.step_count
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for p in params:
        g = p.grad
        p.adam_m *= cfg.beta1
        p.adam_m += (1.0 - cfg.beta1) * g
        p.adam_v *= cfg.beta2
        p.adam_v += (1.0 - cfg.beta2) * (g * g)
        m_hat = p.adam_m / bc1
        v_hat = p.adam_v / bc2
        p.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        p.zero_grad()
