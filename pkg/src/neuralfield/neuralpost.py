"""One-hidden-layer ReLU network trained with a limited-memory BFGS optimizer."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    c1: float = 1e-4  # sufficient decrease
    c2: float = 0.9  # curvature
    max_line_search: int = 30
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line-search constants need 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    status: str  # "converged" | "max_iterations" | "line_search_failed"
    trace: list = field(default_factory=list)  # (f, |g|, step) per accepted iterate

    @property
    def success(self) -> bool:
        return self.status == "converged"


def two_loop_direction(g: np.ndarray, s_hist, y_hist, h0: float = 1.0) -> np.ndarray:
    """-H g for the L-BFGS inverse Hessian built from the (s, y) pairs, oldest first."""
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    r = h0 * q
    for s, y, rho, a in zip(s_hist, y_hist, rhos, reversed(alphas)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return -r


def _cubic_min(a, fa, ga, b, fb, gb):
    # minimizer of the cubic through (a, fa, ga), (b, fb, gb); None if it does not exist
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def wolfe_line_search(fun: Objective, x, f0, g0, d, step0, c1, c2, max_evals):
    """Strong-Wolfe bracketing and zoom. Returns (step, f, g, evals) or None on failure."""
    dg0 = float(g0 @ d)
    evals = 0
    cache = {}

    def phi(a):
        nonlocal evals
        evals += 1
        f, g = fun(x + a * d)
        cache[a] = (f, g)
        return f, float(g @ d)

    def zoom(lo, f_lo, dg_lo, hi, f_hi, dg_hi):
        while evals < max_evals:
            a = _cubic_min(lo, f_lo, dg_lo, hi, f_hi, dg_hi)
            width = abs(hi - lo)
            if a is None or not (min(lo, hi) + 0.1 * width <= a <= max(lo, hi) - 0.1 * width):
                a = 0.5 * (lo + hi)
            fa, dga = phi(a)
            if not math.isfinite(fa) or fa > f0 + c1 * a * dg0 or fa >= f_lo:
                hi, f_hi, dg_hi = a, fa, dga
            else:
                if abs(dga) <= -c2 * dg0:
                    return a
                if dga * (hi - lo) >= 0:
                    hi, f_hi, dg_hi = lo, f_lo, dg_lo
                lo, f_lo, dg_lo = a, fa, dga
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    prev, f_prev, dg_prev = 0.0, f0, dg0
    a = step0
    for i in range(max_evals):
        fa, dga = phi(a)
        if not math.isfinite(fa) or fa > f0 + c1 * a * dg0 or (i > 0 and fa >= f_prev):
            res = zoom(prev, f_prev, dg_prev, a, fa if math.isfinite(fa) else np.inf, dga)
            break
        if abs(dga) <= -c2 * dg0:
            res = a
            break
        if dga >= 0:
            res = zoom(a, fa, dga, prev, f_prev, dg_prev)
            break
        prev, f_prev, dg_prev = a, fa, dga
        a *= 2.0
        if evals >= max_evals:
            res = None
            break
    else:
        res = None
    if res is None:
        # fall back to the best sufficient-decrease point seen, if any
        ok = [(v[0], k) for k, v in cache.items() if k > 0 and math.isfinite(v[0])
              and v[0] <= f0 + c1 * k * dg0]
        if not ok:
            return None
        res = min(ok)[1]
    f, g = cache[res]
    return res, f, g, evals


def lbfgs_minimize(fun: Objective, x0: np.ndarray, cfg: LbfgsConfig = LbfgsConfig()) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Curvature pairs with s^T y <= 0 are skipped. A non-descent direction clears the
    memory and falls back to steepest descent.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not math.isfinite(f):
        raise OptimizerError("objective is not finite at the starting point")
    s_hist: deque = deque(maxlen=cfg.memory)
    y_hist: deque = deque(maxlen=cfg.memory)
    h0 = 1.0
    trace = [(float(f), float(np.linalg.norm(g)), 0.0)]
    status = "max_iterations"
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.gradient_tolerance:
            status = "converged"
            it -= 1
            break
        d = two_loop_direction(g, list(s_hist), list(y_hist), h0) if s_hist else -g
        if float(g @ d) >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
        step0 = 1.0 if s_hist else min(1.0, 1.0 / gnorm)
        ls = wolfe_line_search(fun, x, f, g, d, step0, cfg.c1, cfg.c2, cfg.max_line_search)
        if ls is None and s_hist:
            s_hist.clear()
            y_hist.clear()
            d = -g
            ls = wolfe_line_search(fun, x, f, g, d, min(1.0, 1.0 / gnorm), cfg.c1, cfg.c2,
                                   cfg.max_line_search)
        if ls is None:
            status = "line_search_failed"
            it -= 1
            break
        step, f_new, g_new, _ = ls
        s = step * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            h0 = sy / float(y @ y)
        x = x + s
        f, g = f_new, g_new
        trace.append((float(f), float(np.linalg.norm(g)), float(step)))
    else:
        if float(np.linalg.norm(g)) <= cfg.gradient_tolerance:
            status = "converged"
    return LbfgsResult(x=x, fun=float(f), grad_norm=float(np.linalg.norm(g)), iterations=it,
                       status=status, trace=trace)


# -- network ------------------------------------------------------------------


@dataclass(eq=False)
class MlpModel:
    """y = w2 . relu(W1 x + b1) + b2 on standardized inputs, targets rescaled back."""

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: float = 0.0
    y_scale: float = 1.0
    seed: int | None = None
    config: dict = field(default_factory=dict)

    @property
    def input_size(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W1.shape[0]

    def pack(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def unpack(cls, theta: np.ndarray, hidden: int, inputs: int, **kw) -> "MlpModel":
        n1 = hidden * inputs
        return cls(W1=theta[:n1].reshape(hidden, inputs), b1=theta[n1:n1 + hidden],
                   w2=theta[n1 + hidden:n1 + 2 * hidden], b2=float(theta[-1]), **kw)

    def to_json(self) -> dict:
        return {
            "hidden_size": self.hidden_size, "input_size": self.input_size,
            "W1": self.W1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2,
            "x_mean": None if self.x_mean is None else self.x_mean.tolist(),
            "x_scale": None if self.x_scale is None else self.x_scale.tolist(),
            "y_mean": self.y_mean, "y_scale": self.y_scale, "seed": self.seed, "config": self.config,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MlpModel":
        arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
        return cls(W1=arr(doc["W1"]), b1=arr(doc["b1"]), w2=arr(doc["w2"]), b2=float(doc["b2"]),
                   x_mean=arr(doc["x_mean"]), x_scale=arr(doc["x_scale"]), y_mean=doc["y_mean"],
                   y_scale=doc["y_scale"], seed=doc.get("seed"), config=doc.get("config", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")


def _check_dims(model: MlpModel, X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != model.input_size:
        raise ValueError(f"expected inputs with {model.input_size} columns, got shape {X.shape}")


def mlp_forward(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Raw network output for already-normalized inputs."""
    X = np.asarray(X, dtype=float)
    _check_dims(model, X)
    return np.maximum(X @ model.W1.T + model.b1, 0.0) @ model.w2 + model.b2


def mlp_predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Output in target units for raw feature rows."""
    X = np.asarray(X, dtype=float)
    if model.x_mean is not None:
        X = (X - model.x_mean) / model.x_scale
    return mlp_forward(model, X) * model.y_scale + model.y_mean


def mlp_loss_grad(model: MlpModel, X: np.ndarray, y_tag: np.ndarray, l2: float = 0.0):
    """Mean squared error plus l2 * ||params||^2 and its gradient (packed like ``pack``)."""
    X = np.asarray(X, dtype=float)
    _check_dims(model, X)
    y_tag = np.asarray(y_tag, dtype=float)
    n = X.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite results are reported below
        z = X @ model.W1.T + model.b1
        h = np.maximum(z, 0.0)
        r = h @ model.w2 + model.b2 - y_tag
        theta = model.pack()
        loss = float(r @ r) / n + l2 * float(theta @ theta)
    if not math.isfinite(loss):
        for name, blk in (("W1", model.W1), ("b1", model.b1), ("w2", model.w2), ("b2", model.b2)):
            if not np.all(np.isfinite(blk)):
                raise FloatingPointError(f"non-finite loss: parameter block {name} is not finite")
        raise FloatingPointError("non-finite loss (overflow in the forward pass)")
    dy = 2.0 * r / n
    dz = np.outer(dy, model.w2)
    dz[z <= 0] = 0.0
    grad = np.concatenate([(dz.T @ X).ravel(), dz.sum(axis=0), h.T @ dy, [dy.sum()]])
    return loss, grad + 2.0 * l2 * theta


def init_mlp(inputs: int, hidden: int, seed: int) -> MlpModel:
    rng = np.random.default_rng(seed)
    s1 = math.sqrt(6.0 / (inputs + hidden))
    s2 = math.sqrt(6.0 / (hidden + 1))
    return MlpModel(W1=rng.uniform(-s1, s1, (hidden, inputs)), b1=np.zeros(hidden),
                    w2=rng.uniform(-s2, s2, hidden), b2=0.0, seed=seed)


def train_mlp(X: np.ndarray, y_tag: np.ndarray, hidden: int = 150, l2: float = 1e-4,
              cfg: LbfgsConfig = LbfgsConfig(), standardize: bool = True) -> tuple[MlpModel, LbfgsResult]:
    """Fit the network by L-BFGS on the mean-squared-error objective."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y_tag, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} rows but {y.size} targets")
    if standardize:
        xm, xs = X.mean(axis=0), X.std(axis=0)
        xs[xs == 0] = 1.0
        ym, ys = float(y.mean()), float(y.std()) or 1.0
    else:
        xm, xs, ym, ys = np.zeros(X.shape[1]), np.ones(X.shape[1]), 0.0, 1.0
    Xn = (X - xm) / xs
    yn = (y - ym) / ys
    model = init_mlp(X.shape[1], hidden, cfg.seed)
    h, d = hidden, X.shape[1]

    def objective(theta):
        return mlp_loss_grad(MlpModel.unpack(theta, h, d), Xn, yn, l2)

    res = lbfgs_minimize(objective, model.pack(), cfg)
    trained = MlpModel.unpack(res.x, h, d, x_mean=xm if standardize else None,
                              x_scale=xs if standardize else None, y_mean=ym, y_scale=ys,
                              seed=cfg.seed, config={"l2": l2, "lbfgs": asdict(cfg)})
    return trained, res
