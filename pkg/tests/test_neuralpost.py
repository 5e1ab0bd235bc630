import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from neuralfield.neuralpost import (
    LbfgsConfig,
    MlpModel,
    init_mlp,
    lbfgs_minimize,
    mlp_loss_grad,
    mlp_predict,
    train_mlp,
    two_loop_direction,
)
from neuralfield.tasks import nmse


def fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def kink_margin(model, X):
    z = X @ model.W1.T + model.b1
    return np.abs(z).min()


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_mlp_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    D, H, n = 4, 6, 9
    X = rng.standard_normal((n, D))
    y = rng.standard_normal(n)
    model = init_mlp(D, H, seed)
    model.b1[:] = rng.normal(0, 0.3, H)
    model.b2 = float(rng.normal())
    # kink exclusion: finite differences straddling a ReLU hinge are meaningless
    assume(kink_margin(model, X) > 1e-3)
    theta = model.pack()
    f = lambda t: mlp_loss_grad(MlpModel.unpack(t, H, D), X, y, 1e-3)[0]  # noqa: E731
    _, g = mlp_loss_grad(model, X, y, 1e-3)
    g_fd = fd_gradient(f, theta)
    assert np.linalg.norm(g - g_fd) / np.linalg.norm(g) < 1e-5


def test_non_finite_parameters_named():
    m = init_mlp(2, 3, 0)
    m.w2[1] = np.inf
    with pytest.raises(FloatingPointError, match="w2"):
        mlp_loss_grad(m, np.ones((2, 2)), np.zeros(2))


def conjugate_pairs(A, rng):
    d = A.shape[0]
    s = []
    for v in rng.standard_normal((d, d)):
        for p in s:
            v = v - (p @ A @ v) / (p @ A @ p) * p
        s.append(v)
    return s, [A @ v for v in s]


@pytest.mark.parametrize("d", [3, 6, 10])
def test_two_loop_with_conjugate_pairs_is_newton(d):
    rng = np.random.default_rng(d)
    Q = rng.standard_normal((d, d))
    A = Q @ Q.T + d * np.eye(d)
    s, y = conjugate_pairs(A, rng)
    g = rng.standard_normal(d)
    h0 = float(s[-1] @ y[-1]) / float(y[-1] @ y[-1])
    p = two_loop_direction(g, s, y, h0)
    newton = -np.linalg.solve(A, g)
    cos = p @ newton / (np.linalg.norm(p) * np.linalg.norm(newton))
    assert cos > 1 - 1e-8
    assert np.allclose(p, newton, rtol=1e-8)


def test_two_loop_empty_history_is_scaled_steepest_descent():
    g = np.array([1.0, -2.0])
    assert np.allclose(two_loop_direction(g, [], [], 0.5), -0.5 * g)


@pytest.mark.parametrize("lam", [1e-3, 0.1, 1.0])
def test_lbfgs_reaches_closed_form_ridge(lam):
    rng = np.random.default_rng(7)
    n, d = 120, 15
    X = rng.standard_normal((n, d))
    y = X @ rng.standard_normal(d) + 0.3 * rng.standard_normal(n)

    def fun(w):
        r = X @ w - y
        return float(r @ r) / n + lam * float(w @ w), 2 * X.T @ r / n + 2 * lam * w

    res = lbfgs_minimize(fun, np.zeros(d), LbfgsConfig(gradient_tolerance=1e-12, max_iterations=500))
    exact = np.linalg.solve(X.T @ X / n + lam * np.eye(d), X.T @ y / n)
    assert np.abs(res.x - exact).max() < 1e-6


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_objective_non_increasing_along_trace(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 3))
    y = np.tanh(X @ rng.standard_normal(3))
    model = init_mlp(3, 5, seed)

    def fun(t):
        return mlp_loss_grad(MlpModel.unpack(t, 5, 3), X, y, 1e-4)

    res = lbfgs_minimize(fun, model.pack(), LbfgsConfig(max_iterations=60))
    f = [t[0] for t in res.trace]
    assert all(b <= a + 1e-12 for a, b in zip(f, f[1:]))


def test_rosenbrock():
    def fun(x):
        a, b = x
        f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
        return f, np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])

    res = lbfgs_minimize(fun, np.array([-1.2, 1.0]), LbfgsConfig(gradient_tolerance=1e-10))
    assert res.success
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-8)


def test_single_sample_interpolated():
    X = np.array([[0.3, -1.2, 0.5]])
    y = np.array([2.0])
    model, res = train_mlp(X, y, hidden=10, l2=0.0, standardize=False,
                           cfg=LbfgsConfig(max_iterations=200, gradient_tolerance=1e-12))
    assert res.fun < 1e-8
    assert mlp_predict(model, X)[0] == pytest.approx(2.0, abs=1e-4)


def test_training_reproducible():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 3))
    y = X[:, 0] ** 2
    cfg = LbfgsConfig(max_iterations=30, seed=11)
    m1, _ = train_mlp(X, y, hidden=8, cfg=cfg)
    m2, _ = train_mlp(X, y, hidden=8, cfg=cfg)
    assert np.array_equal(m1.pack(), m2.pack())
    m3, _ = train_mlp(X, y, hidden=8, cfg=LbfgsConfig(max_iterations=30, seed=12))
    assert not np.array_equal(m1.pack(), m3.pack())


def test_linear_targets_match_ridge():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((400, 5))
    y = X @ rng.standard_normal(5) + 0.1 * rng.standard_normal(400)
    tr, te = slice(0, 300), slice(300, 400)
    model, _ = train_mlp(X[tr], y[tr], hidden=20, cfg=LbfgsConfig(max_iterations=300))
    A = np.column_stack([np.ones(300), X[tr]])
    w = np.linalg.lstsq(A, y[tr], rcond=None)[0]
    ridge = nmse(np.column_stack([np.ones(100), X[te]]) @ w, y[te])
    assert nmse(mlp_predict(model, X[te]), y[te]) <= ridge + 0.01


def test_mlp_json_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((20, 3))
    model, _ = train_mlp(X, X[:, 1], hidden=4, cfg=LbfgsConfig(max_iterations=5))
    p = tmp_path / "mlp.json"
    model.save(p)
    import json
    back = MlpModel.from_json(json.loads(p.read_text(encoding="utf-8")))
    assert np.array_equal(mlp_predict(back, X), mlp_predict(model, X))
    assert back.seed == model.seed


def test_line_search_constants_validated():
    with pytest.raises(ValueError):
        LbfgsConfig(c1=0.5, c2=0.1)
