"""Small float64 neural toolkit: MLP, LSTM cell, SGD/Adam, gradient checks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class NumericError(FloatingPointError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(z):
    # Split by sign so large |z| never overflows exp.
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# Multi-layer perceptron
# ---------------------------------------------------------------------------

class Mlp:
    """ReLU hidden layers, linear output.  ``W[i]`` has shape ``(in, out)``."""

    def __init__(self, layer_sizes, seed: int | None = 0, rng: np.random.Generator | None = None):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise DimensionError(f"invalid layer sizes {layer_sizes!r}")
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.layer_sizes = sizes
        self.weights = [glorot_uniform(rng, a, b, (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        self.biases = [np.zeros(b) for b in sizes[1:]]
        self._cache = None

    @classmethod
    def from_params(cls, weights, biases) -> "Mlp":
        sizes = [weights[0].shape[0]] + [w.shape[1] for w in weights]
        net = cls(sizes, seed=0)
        for w, b, (a, c) in zip(weights, biases, zip(sizes[:-1], sizes[1:])):
            if np.shape(w) != (a, c) or np.shape(b) != (c,):
                raise DimensionError("weight/bias shapes do not chain")
        net.weights = [np.array(w, dtype=np.float64) for w in weights]
        net.biases = [np.array(b, dtype=np.float64) for b in biases]
        return net

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp.from_params([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def load_from(self, other: "Mlp") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src

    def _run(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.shape[-1] != self.layer_sizes[0]:
            raise DimensionError(f"expected input width {self.layer_sizes[0]}, got {a.shape[-1]}")
        acts = [a]
        pre = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            a = z if i == last else np.maximum(z, 0.0)
            acts.append(a)
        return (a[0] if single else a), (single, acts, pre)

    def forward(self, x) -> np.ndarray:
        out, self._cache = self._run(x)
        return out

    def predict(self, x) -> np.ndarray:
        """Forward pass that leaves the backward cache untouched."""
        return self._run(x)[0]

    __call__ = predict

    def backward(self, output_grad) -> list[np.ndarray]:
        """Gradients in :meth:`params` order for the last :meth:`forward` call."""
        if self._cache is None:
            raise StateError("backward called before forward")
        single, acts, pre = self._cache
        g = np.asarray(output_grad, dtype=np.float64)
        g = g[None, :] if single else g
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (pre[i] > 0)
            grads.append(g.sum(axis=0))          # bias
            grads.append(acts[i].T @ g)          # weight
            g = g @ self.weights[i].T
        grads.reverse()
        return grads

    def to_checkpoint(self) -> dict:
        return {"kind": "mlp", "layer_sizes": self.layer_sizes, "params": _pack(self.params())}

    @classmethod
    def from_checkpoint(cls, data: dict) -> "Mlp":
        arrays = _unpack(data["params"])
        return cls.from_params(arrays[0::2], arrays[1::2])


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------

class LstmCell:
    """Gate rows are stacked as input, forget, output, candidate.

    ``W`` has shape ``(4H, I + H)`` acting on ``[x_t, h_{t-1}]``.
    """

    def __init__(self, input_size: int, hidden_size: int, seed: int | None = 0,
                 rng: np.random.Generator | None = None):
        if input_size <= 0 or hidden_size <= 0:
            raise DimensionError("input_size and hidden_size must be positive")
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.input_size = input_size
        self.hidden_size = hidden_size
        H = hidden_size
        self.W = glorot_uniform(rng, input_size + H, H, (4 * H, input_size + H))
        self.b = np.zeros(4 * H)
        self.b[H:2 * H] = 1.0
        self._cache = None

    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def forward_sequence(self, inputs, h0=None, c0=None) -> np.ndarray:
        """Hidden states for ``inputs`` of shape ``(T, I)`` or ``(T, B, I)``."""
        x = np.asarray(inputs, dtype=np.float64)
        unbatched = x.ndim == 2
        if unbatched:
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise DimensionError(f"expected inputs (T, [B,] {self.input_size}), got {np.shape(inputs)}")
        T, B, _ = x.shape
        H = self.hidden_size
        h = np.zeros((B, H)) if h0 is None else np.array(h0, dtype=np.float64).reshape(B, H)
        c = np.zeros((B, H)) if c0 is None else np.array(c0, dtype=np.float64).reshape(B, H)
        hs = np.empty((T, B, H))
        steps = []
        for t in range(T):
            xh = np.concatenate([x[t], h], axis=1)
            z = xh @ self.W.T + self.b
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            o = sigmoid(z[:, 2 * H:3 * H])
            g = np.tanh(z[:, 3 * H:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[t] = h
            steps.append((xh, i, f, o, g, c_prev, tc))
        self._cache = (unbatched, steps)
        self.last_cell = c
        return hs[:, 0, :] if unbatched else hs

    def bptt(self, output_grads):
        """Backpropagate ``dL/dh_t`` for every step.

        Returns
        -------
        grads : list of ndarray
            ``[dW, db]`` matching :meth:`params`.
        dx : ndarray
            Gradient w.r.t. the inputs, same shape as the forward inputs.
        """
        if self._cache is None:
            raise StateError("bptt called before forward_sequence")
        unbatched, steps = self._cache
        dh_all = np.asarray(output_grads, dtype=np.float64)
        if unbatched:
            dh_all = dh_all[:, None, :]
        T = len(steps)
        if dh_all.shape[0] != T:
            raise DimensionError("output_grads length differs from the cached sequence")
        H = self.hidden_size
        I = self.input_size
        dW = np.zeros_like(self.W)
        db = np.zeros_like(self.b)
        B = dh_all.shape[1]
        dx = np.empty((T, B, I))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            xh, i, f, o, g, c_prev, tc = steps[t]
            dh = dh_all[t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                do * o * (1.0 - o),
                dg * (1.0 - g * g),
            ], axis=1)
            dW += dz.T @ xh
            db += dz.sum(axis=0)
            dxh = dz @ self.W
            dx[t] = dxh[:, :I]
            dh_next = dxh[:, I:]
        if unbatched:
            dx = dx[:, 0, :]
        return [dW, db], dx

    def to_checkpoint(self) -> dict:
        return {"kind": "lstm", "input_size": self.input_size, "hidden_size": self.hidden_size,
                "params": _pack(self.params())}

    @classmethod
    def from_checkpoint(cls, data: dict) -> "LstmCell":
        cell = cls(data["input_size"], data["hidden_size"])
        cell.W, cell.b = _unpack(data["params"])
        return cell


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def optimize_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimState) -> list[np.ndarray]:
    """In-place SGD or bias-corrected Adam update; returns ``params``."""
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise DimensionError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        return params
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Finite-difference checks
# ---------------------------------------------------------------------------

def numerical_gradient(loss_fn, param: np.ndarray, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. entries of ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for k in idx:
        old = flat[k]
        flat[k] = old + eps
        up = loss_fn()
        flat[k] = old - eps
        down = loss_fn()
        flat[k] = old
        gflat[k] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(loss_fn, params, analytic, eps: float = 1e-5, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """Max relative error between ``analytic`` grads and central differences.

    With ``max_entries`` only a random subset of each parameter is probed.
    """
    worst = 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    for p, g in zip(params, analytic):
        if max_entries is not None and p.size > max_entries:
            idx = rng.choice(p.size, size=max_entries, replace=False)
        else:
            idx = np.arange(p.size)
        num = numerical_gradient(loss_fn, p, eps, idx)
        worst = max(worst, relative_error(np.asarray(g).reshape(-1)[idx], num.reshape(-1)[idx]))
    return worst


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    diff = np.asarray(pred, dtype=np.float64) - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def huber_loss(pred, target, delta: float = 1.0):
    """Mean Huber loss and its gradient w.r.t. ``pred``."""
    diff = np.asarray(pred, dtype=np.float64) - target
    absd = np.abs(diff)
    quad = absd <= delta
    loss = np.where(quad, 0.5 * diff * diff, delta * (absd - 0.5 * delta))
    grad = np.where(quad, diff, delta * np.sign(diff)) / diff.size
    return float(np.mean(loss)), grad


def _pack(arrays) -> list[dict]:
    return [{"shape": list(a.shape), "data": a.ravel().tolist()} for a in arrays]


def _unpack(items) -> list[np.ndarray]:
    return [np.array(it["data"], dtype=np.float64).reshape(it["shape"]) for it in items]


def save_checkpoint(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_checkpoint(), fh)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    kind = data.get("kind")
    if kind == "mlp":
        return Mlp.from_checkpoint(data)
    if kind == "lstm":
        return LstmCell.from_checkpoint(data)
    raise ValueError(f"unknown checkpoint kind {kind!r}")
