"""Small numerical building blocks shared by the scorers.

Everything operates on plain numpy arrays; parameters live in flat
``{name: ndarray}`` dicts so checkpoints, Adam state and gradient checks
can treat every architecture uniformly.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def masked_softmax(scores: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the entries where ``allowed`` is True.

    Rows with no allowed entry come back all-zero instead of NaN, which
    is what a fully-padded attention query needs.
    """
    neg = np.where(allowed, scores, -np.inf)
    row_max = np.max(neg, axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(neg - row_max) * allowed
    denom = np.sum(e, axis=-1, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    # log sigma(x) = -log(1 + e^{-x}), stable on both tails
    return -np.logaddexp(0.0, -x)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


class Adam:
    """Standard Adam with bias correction over a named-parameter dict."""

    def __init__(self, param_names, lr: float = 0.005, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: None for k in param_names}
        self.v = {k: None for k in param_names}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            p = params[k]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k!r}")
            if self.m[k] is None:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / b1t
            v_hat = self.v[k] / b2t
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def save_params(path, params: dict[str, np.ndarray], **meta) -> None:
    """Write named tensors (plus scalar metadata) to an npz checkpoint."""
    arrays = dict(params)
    for k, v in meta.items():
        arrays[f"__meta__{k}"] = np.asarray(v)
    np.savez(path, **arrays)


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    """Bit-exact inverse of save_params; returns (params, metadata)."""
    with np.load(path, allow_pickle=False) as data:
        params, meta = {}, {}
        for k in data.files:
            if k.startswith("__meta__"):
                meta[k[len("__meta__"):]] = data[k][()]
            else:
                params[k] = data[k]
    return params, meta


def finite_difference_grad(loss_fn, params: dict[str, np.ndarray], name: str,
                           index: tuple[int, ...], h: float = 1e-5) -> float:
    """Central finite difference of ``loss_fn(params)`` in one coordinate."""
    orig = params[name][index]
    params[name][index] = orig + h
    up = loss_fn(params)
    params[name][index] = orig - h
    down = loss_fn(params)
    params[name][index] = orig
    return (up - down) / (2.0 * h)


def check_gradients(loss_fn, grad_fn, params: dict[str, np.ndarray],
                    n_coords: int = 100, seed: int = 0, h: float = 1e-5,
                    floor: float = 1e-6) -> float:
    """Max relative error of analytic vs finite-difference gradients.

    Samples coordinates uniformly across all parameter tensors.  The
    denominator is floored so coordinates whose true gradient is below
    the finite-difference noise level compare absolutely instead.
    """
    rng = np.random.default_rng(seed)
    grads = grad_fn(params)
    names = sorted(grads.keys())
    sizes = np.array([params[n].size for n in names])
    worst = 0.0
    for _ in range(n_coords):
        which = rng.choice(len(names), p=sizes / sizes.sum())
        name = names[which]
        flat = int(rng.integers(params[name].size))
        index = np.unravel_index(flat, params[name].shape)
        numeric = finite_difference_grad(loss_fn, params, name, index, h=h)
        analytic = grads[name][index]
        denom = max(abs(numeric), abs(analytic), floor)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
