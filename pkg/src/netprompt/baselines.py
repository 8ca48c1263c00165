"""Forecasting baselines: ARIMA(p, d, q) by conditional sum of squares,
an LSTM direct multi-output forecaster, and seasonal-naive."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from netprompt import _kernels, nn

logger = logging.getLogger(__name__)

HOURS = 24


class ArimaFitError(RuntimeError):
    def __init__(self, message: str, objective: float):
        super().__init__(f"{message} (final objective {objective!r})")
        self.objective = objective


class TrainingError(RuntimeError):
    pass


class ForecastInputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Differencing
# ---------------------------------------------------------------------------

def difference(series, d: int = 1) -> np.ndarray:
    return np.diff(np.asarray(series, dtype=np.float64), n=d)


def integrate(diffed, heads) -> np.ndarray:
    """Invert ``difference``: ``heads[k]`` is the first value of the order-``k`` difference."""
    out = np.asarray(diffed, dtype=np.float64)
    for h in reversed(list(heads)):
        out = np.concatenate(([h], h + np.cumsum(out)))
    return out


def _heads(series, d: int) -> list[float]:
    heads, cur = [], np.asarray(series, dtype=np.float64)
    for _ in range(d):
        heads.append(float(cur[0]))
        cur = np.diff(cur)
    return heads


# ---------------------------------------------------------------------------
# ARIMA
# ---------------------------------------------------------------------------

@dataclass
class ArimaModel:
    p: int = 2
    d: int = 1
    q: int = 2
    phi: np.ndarray = field(default_factory=lambda: np.zeros(2))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    intercept: float = 0.0
    sigma2: float = float("nan")
    objective: float = float("nan")
    iterations: int = 0
    converged: bool = False

    @property
    def ar_roots(self) -> np.ndarray:
        # 1 - phi_1 z - ... - phi_p z^p
        coeffs = np.concatenate(([1.0], -np.asarray(self.phi)))[::-1]
        return np.roots(coeffs) if self.p else np.array([])

    @property
    def stationary(self) -> bool:
        return bool(np.all(np.abs(self.ar_roots) > 1.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phi"], d["theta"] = list(map(float, self.phi)), list(map(float, self.theta))
        return d


def css_objective(w, c, phi, theta) -> float:
    e, _ = _kernels.css_residuals(w, c, phi, theta)
    return float(np.mean(e * e))


def arima_fit(series, p: int = 2, d: int = 1, q: int = 2, learning_rate: float = 0.01,
              max_iter: int = 5000, tol: float = 1e-8, window: int = 50) -> ArimaModel:
    """Fit ARIMA by minimizing the conditional sum of squares with Adam.

    The differenced series is standardized for the optimization; the
    intercept and residual variance are reported on the original scale.
    Pre-sample residuals are zero.  Iteration stops when the best objective
    improves by less than ``tol`` over ``window`` consecutive steps (a single
    Adam step can stall by chance while oscillating) or after ``max_iter``
    steps; the best parameters seen are kept.
    """
    y = np.asarray(series, dtype=np.float64)
    if y.size < 50:
        raise ForecastInputError("ARIMA needs at least 50 observations")
    if not np.all(np.isfinite(y)):
        raise ForecastInputError("series contains non-finite values")
    w = difference(y, d)
    scale = float(np.std(w)) or 1.0
    z = w / scale
    x = np.zeros(1 + p + q)
    x[0] = z.mean()
    opt = nn.OptimState("adam", learning_rate)
    best_x, best_obj = x.copy(), np.inf
    trail = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        e, g = _kernels.css_residuals(z, x[0], x[1:1 + p], x[1 + p:])
        obj = float(np.mean(e * e))
        if not np.isfinite(obj):
            break
        if obj < best_obj:
            best_obj, best_x = obj, x.copy()
        trail.append(best_obj)
        if len(trail) > window and trail[-1 - window] - best_obj < tol:
            converged = True
            break
        if not np.all(np.isfinite(g)):
            break
        nn.optimize_step([x], [g], opt)
    if not np.isfinite(best_obj):
        raise ArimaFitError("CSS objective is not finite", best_obj)
    model = ArimaModel(p, d, q, best_x[1:1 + p].copy(), best_x[1 + p:].copy(), float(best_x[0] * scale),
                       float(best_obj * scale * scale), float(best_obj), it, converged)
    if p and not model.stationary:
        warnings.warn(f"fitted AR polynomial is not stationary (phi={model.phi.tolist()})", stacklevel=2)
    return model


def arima_forecast(model: ArimaModel, history, horizon: int = HOURS) -> np.ndarray:
    """Recursive forecast with future shocks set to zero, integrated back to levels."""
    y = np.asarray(history, dtype=np.float64)
    if y.size <= model.p + model.d:
        raise ForecastInputError("history too short for the model orders")
    levels = [y]
    for _ in range(model.d):
        levels.append(np.diff(levels[-1]))
    w = levels[-1]
    if w.size > model.p:
        e, _ = _kernels.css_residuals(w, model.intercept, model.phi, model.theta)
    else:
        e = np.zeros(0)
    w_ext = list(w)
    e_ext = [0.0] * model.p + list(e)
    for _ in range(horizon):
        val = model.intercept
        for i in range(model.p):
            val += model.phi[i] * w_ext[-1 - i]
        for j in range(model.q):
            val += model.theta[j] * e_ext[-1 - j]
        w_ext.append(val)
        e_ext.append(0.0)
    future = np.array(w_ext[w.size:])
    for k in range(model.d - 1, -1, -1):
        future = levels[k][-1] + np.cumsum(future)
    return future


# ---------------------------------------------------------------------------
# LSTM forecaster
# ---------------------------------------------------------------------------

@dataclass
class LstmForecasterConfig:
    hidden_size: int = 32
    window: int = 24
    horizon: int = 24
    epochs: int = 200
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 32
    seed: int = 0
    grad_check: bool = True

    def __post_init__(self):
        for name in ("hidden_size", "window", "horizon", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


class LstmForecaster:
    """Window of past hours -> LSTM -> final hidden state -> linear head -> next hours.

    Inputs are min-max scaled by training statistics.  The head starts at
    zero, so an untrained model predicts 0 on the scaled axis.
    """

    def __init__(self, config: LstmForecasterConfig | None = None):
        self.config = config or LstmForecasterConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        self.rng = rng
        self.cell = nn.LstmCell(1, cfg.hidden_size, rng=rng)
        self.head_w = np.zeros((cfg.hidden_size, cfg.horizon))
        self.head_b = np.zeros(cfg.horizon)
        self.lo, self.hi = 0.0, 1.0
        self.loss_history: list[float] = []

    def params(self) -> list[np.ndarray]:
        return self.cell.params() + [self.head_w, self.head_b]

    def _scale(self, x):
        return (np.asarray(x, dtype=np.float64) - self.lo) / (self.hi - self.lo)

    def _unscale(self, x):
        return np.asarray(x, dtype=np.float64) * (self.hi - self.lo) + self.lo

    def _forward(self, X):
        hs = self.cell.forward_sequence(X.T[:, :, None])
        h_last = hs[-1]
        return h_last, h_last @ self.head_w + self.head_b

    def loss_and_grads(self, X, Y):
        h_last, out = self._forward(X)
        loss, dout = nn.mse_loss(out, Y)
        d_head_w = h_last.T @ dout
        d_head_b = dout.sum(axis=0)
        dhs = np.zeros((X.shape[1], X.shape[0], self.config.hidden_size))
        dhs[-1] = dout @ self.head_w.T
        (dW, db), _ = self.cell.bptt(dhs)
        return loss, [dW, db, d_head_w, d_head_b]

    def windows(self, scaled: np.ndarray):
        cfg = self.config
        n = scaled.size - cfg.window - cfg.horizon + 1
        idx = np.arange(n)[:, None]
        X = scaled[idx + np.arange(cfg.window)[None, :]]
        Y = scaled[idx + cfg.window + np.arange(cfg.horizon)[None, :]]
        return X, Y

    def gradient_check(self, X, Y, max_entries: int = 12) -> float:
        """Finite-difference check of the full model on a small batch."""
        X, Y = X[:4], Y[:4]
        # Nudge the zero head so gradients reach the LSTM weights.
        saved = self.head_w.copy()
        self.head_w += 0.1 * self.rng.standard_normal(self.head_w.shape)
        _, grads = self.loss_and_grads(X, Y)
        err = nn.check_gradients(lambda: self.loss_and_grads(X, Y)[0], self.params(), grads,
                                 max_entries=max_entries, rng=np.random.default_rng(1))
        self.head_w[...] = saved
        return err

    def fit(self, train) -> "LstmForecaster":
        cfg = self.config
        train = np.asarray(train, dtype=np.float64)
        if train.size < 14 * HOURS:
            raise ForecastInputError("LSTM training needs at least 14 days")
        self.lo, self.hi = float(train.min()), float(train.max())
        if self.hi <= self.lo:
            self.hi = self.lo + 1.0
        X, Y = self.windows(self._scale(train))
        if cfg.grad_check:
            err = self.gradient_check(X, Y)
            if err > 1e-4:
                raise TrainingError(f"gradient check failed: max relative error {err:.2e}")
        opt = nn.OptimState(cfg.optimizer, cfg.learning_rate)
        n = X.shape[0]
        for _ in range(cfg.epochs):
            order = self.rng.permutation(n)
            total = 0.0
            for s in range(0, n, cfg.batch_size):
                b = order[s:s + cfg.batch_size]
                loss, grads = self.loss_and_grads(X[b], Y[b])
                if not np.isfinite(loss):
                    raise TrainingError("loss became non-finite")
                nn.optimize_step(self.params(), grads, opt)
                total += loss * b.size
            self.loss_history.append(total / n)
        return self

    def predict(self, window) -> np.ndarray:
        x = self._scale(np.asarray(window, dtype=np.float64)[-self.config.window:])
        _, out = self._forward(x[None, :])
        return self._unscale(out[0])

    def predict_scaled(self, window) -> np.ndarray:
        x = self._scale(np.asarray(window, dtype=np.float64)[-self.config.window:])
        return self._forward(x[None, :])[1][0]


def lstm_train_forecast(train, priors, config: LstmForecasterConfig | None = None):
    """Train on ``train`` and forecast the day after each 24-hour prior."""
    model = LstmForecaster(config).fit(train)
    return [model.predict(p) for p in priors], model


# ---------------------------------------------------------------------------
# Seasonal naive
# ---------------------------------------------------------------------------

def seasonal_naive(history, horizon: int = HOURS, season: int = HOURS) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64)
    if h.size < season:
        raise ForecastInputError(f"seasonal-naive needs at least {season} values")
    last = h[-season:]
    return np.resize(last, horizon)
