"""End-to-end acceptance checks. Each test records one PASS/FAIL line per criterion."""

import math

import mpmath
import numpy as np

from neuralfield.analysis import mac_rate, pulse_response_correlation, spatial_correlation, spatial_record
from neuralfield.fieldsim import (
    CouplingPlan,
    DetectionSpec,
    ModulationSignal,
    modal_taps,
    simulate_field,
    simulate_multiwavelength,
)
from neuralfield.modeslab import InputField, ModeBasis, WaveguideSpec, coupling_coefficients, solve_modes
from neuralfield.neuralpost import LbfgsConfig, MlpModel, init_mlp, lbfgs_minimize, mlp_loss_grad
from neuralfield.readout import FeatureMatrix, train_ridge
from neuralfield.tasks import (
    PhaseTaskConfig,
    ReadoutConfig,
    SimConfig,
    load_or_generate_series,
    mode_bases,
    phase_features,
    run_memory_task,
    run_phase_task,
    run_prediction_task,
    wdm_sweep,
)

SEEDS = range(5)


def test_criterion_1_mac_formula(acceptance):
    est = mac_rate(65, 68, 4, 0.08, footprint_mm2=4.8)
    rel = abs(est.mac_per_second / 1.333e15 - 1)
    # the per-area reference is quoted to three significant figures
    per_area = float(f"{est.mac_per_second_per_mm2:.3g}")
    acceptance(1, rel < 1e-3 and per_area == 2.78e14,
               f"{est.mac_per_second:.4e} MAC/s (rel {rel:.1e}), {est.mac_per_second_per_mm2:.4e} MAC/s/mm2")


def test_criterion_2_mode_physics(acceptance):
    b = solve_modes(WaveguideSpec())
    ok = 60 <= b.n_modes <= 85 and 0.1 <= b.delay_spread_ns <= 0.3 and 0.6 <= b.round_trip_ns <= 0.9
    acceptance(2, ok, f"M={b.n_modes} (target 68), spread={b.delay_spread_ns:.4f} ns, "
                      f"2L/v_g={b.round_trip_ns:.4f} ns")


def _ridge_oracle_error():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((60, 8))
    y = X @ rng.standard_normal(8) + 0.1 * rng.standard_normal(60)
    w = train_ridge(FeatureMatrix.from_array(X, bias=False), y, gamma=0.3, standardize=False).weights
    with mpmath.workdps(50):
        A = mpmath.matrix(X.tolist())
        ref = mpmath.inverse(A.T * A + 0.3 * mpmath.eye(8)) * (A.T * mpmath.matrix(y.tolist()))
        ref = np.array([float(v) for v in ref])
    return np.abs(w - ref).max() / np.abs(ref).max()


def _two_mode_error():
    rng = np.random.default_rng(1)
    grid = np.linspace(-5, 5, 201)
    dx = grid[1] - grid[0]
    p = np.stack([np.exp(-grid**2), grid * np.exp(-grid**2)])
    p /= np.sqrt(np.sum(p**2, axis=1, keepdims=True) * dx)
    tg = np.array([0.30, 0.37])
    b = ModeBasis(spec=WaveguideSpec(), beta=np.array([10.3, 10.1]), group_delay_ns=tg, profiles=p,
                  grid=grid, solver="exact", transverse_u=np.array([1.0, 2.0]))
    a = np.array([0.8, 0.6j])
    u = rng.uniform(-1, 1, 60)
    mod = ModulationSignal(u, alpha=1.7)
    fld = simulate_field(b, a, mod)
    t = fld.step_index * mod.sim_timestep_ns
    L = b.spec.length_mm * 1e3
    A = a[:, None] * p * np.exp(-1j * b.beta * L)[:, None]
    k = [np.floor((t - tg[m]) / 0.08 + 1e-12).astype(int) for m in range(2)]
    ph = [np.exp(1j * 1.7 * np.where((km >= 0) & (km < 60), u[np.clip(km, 0, 59)], 0.0)) for km in k]
    closed = (np.abs(A[0]) ** 2 + np.abs(A[1]) ** 2)[:, None] \
        + 2 * np.real((A[0] * np.conj(A[1]))[:, None] * (ph[0] * np.conj(ph[1]))[None, :])
    return np.abs(np.abs(fld.values) ** 2 - closed).max()


def _mlp_gradient_error():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X, y = rng.standard_normal((9, 4)), rng.standard_normal(9)
        model = init_mlp(4, 6, seed)
        model.b1[:] = rng.normal(0, 0.3, 6)
        if np.abs(X @ model.W1.T + model.b1).min() < 1e-3:
            continue  # kink exclusion
        theta = model.pack()
        f = lambda t: mlp_loss_grad(MlpModel.unpack(t, 6, 4), X, y, 1e-3)[0]  # noqa: E731
        g = mlp_loss_grad(model, X, y, 1e-3)[1]
        e = np.eye(theta.size) * 1e-6
        fd = np.array([(f(theta + e[i]) - f(theta - e[i])) / 2e-6 for i in range(theta.size)])
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    return worst


def _lbfgs_ridge_error():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((120, 15))
    y = X @ rng.standard_normal(15) + 0.3 * rng.standard_normal(120)
    lam, n = 0.1, 120

    def fun(w):
        r = X @ w - y
        return float(r @ r) / n + lam * float(w @ w), 2 * X.T @ r / n + 2 * lam * w

    res = lbfgs_minimize(fun, np.zeros(15), LbfgsConfig(gradient_tolerance=1e-12, max_iterations=500))
    exact = np.linalg.solve(X.T @ X / n + lam * np.eye(15), X.T @ y / n)
    return np.abs(res.x - exact).max()


def test_criterion_3_oracles(acceptance):
    e = [_ridge_oracle_error(), _two_mode_error(), _mlp_gradient_error(), _lbfgs_ridge_error()]
    ok = e[0] < 1e-8 and e[1] < 1e-10 and e[2] < 1e-5 and e[3] < 1e-6
    acceptance(3, ok, f"ridge {e[0]:.1e}, two-mode {e[1]:.1e}, mlp grad {e[2]:.1e}, lbfgs {e[3]:.1e}")


def test_criterion_4_prediction(acceptance):
    sim = SimConfig()
    rows = []
    for s in SEEDS:
        m = run_prediction_task(load_or_generate_series(seed=s), sim, seed=s).metrics
        rows.append((m["nmse_test"], m["ar_baseline_nmse"], m["n_features"]))
    ok = all(a < 0.1 and a < b for a, b, _ in rows) and all(n - 1 == 260 for *_, n in rows)
    acceptance(4, ok, "NMSE/AR " + ", ".join(f"{a:.4f}/{b:.4f}" for a, b, _ in rows)
               + f"; NK={rows[0][2] - 1}")


def test_criterion_5_multiplexing(acceptance):
    lams = [1550.0, 1549.0, 1551.0, 1548.0, 1552.0]  # L = 1 is the default carrier
    sim = SimConfig()
    table = np.array([wdm_sweep(load_or_generate_series(seed=s), sim, lams, seed=s) for s in SEEDS])
    med = np.median(table, axis=0)
    acceptance(5, bool(np.all(np.diff(med) <= 0)), "median NMSE L=1..5 " + ", ".join(f"{v:.4f}" for v in med))


def test_criterion_6_memory(acceptance):
    m = np.array(run_memory_task(SimConfig(), seed=0).metrics["memory_function"])
    above = np.nonzero(m[1:] > 0.5)[0]
    eff = int(above[-1] + 1) if above.size else 0
    ok = bool(np.all((m >= 0) & (m <= 1))) and eff in (2, 3, 4) and m[20] < 0.1
    acceptance(6, ok, f"effective memory {eff}, m(1..5)={np.round(m[1:6], 3).tolist()}, m(20)={m[20]:.2e}")


def test_criterion_7_phase(acceptance):
    sim, cfg = SimConfig(), PhaseTaskConfig()
    rows = []
    for s in SEEDS:
        F, sig = phase_features(sim, cfg, s)
        r = run_phase_task(sim, ReadoutConfig(), s, cfg, F, sig).metrics
        n = run_phase_task(sim, ReadoutConfig(kind="mlp"), s, cfg, F, sig).metrics
        rows.append((r["correlation"], r["nmse"], n["nmse"]))
    ok = all(c > 0.9 and mlp <= ridge for c, ridge, mlp in rows)
    acceptance(7, ok, "corr/ridge/mlp " + ", ".join(f"{c:.3f}/{r:.4f}/{m:.4f}" for c, r, m in rows))


def test_criterion_8_invariants(acceptance):
    rng = np.random.default_rng(3)
    small = WaveguideSpec(width_um=6.0, length_mm=39.0, n_core=2.556, n_clad=1.444)
    b = solve_modes(small)
    a = coupling_coefficients(b, InputField())
    u = rng.uniform(0, 1, 80)

    I0 = np.abs(simulate_field(b, a, ModulationSignal(u, alpha=0.0)).values) ** 2
    const = np.abs(I0 - I0[:, :1]).max()

    b1 = solve_modes(WaveguideSpec(width_um=0.3))
    a1 = coupling_coefficients(b1, InputField(center_offset_um=0.0))
    I1 = np.abs(simulate_field(b1, a1, ModulationSignal(rng.uniform(-3, 3, 40))).values) ** 2
    single = np.abs(I1 - I1[:, :1]).max() if b1.n_modes == 1 else np.inf

    _, amps = modal_taps(b, a, CouplingPlan(4, 1.0, 1, rng_seed=3))
    power = abs(np.sum(np.abs(amps.sum(axis=0)) ** 2) - np.sum(np.abs(a) ** 2))

    mod = ModulationSignal(u)
    base = np.abs(simulate_field(b, a, mod).values) ** 2
    moved = np.abs(simulate_field(b, a, mod.shifted(3)).values) ** 2
    k = 3 * mod.steps_per_symbol
    shift = np.abs(moved[:, k:] - base[:, :-k]).max()

    det = DetectionSpec(probe_positions_um=tuple(np.linspace(-2.5, 2.5, 9)), noise_std=0.05)
    lams = [1548.0, 1550.0, 1552.0]
    r1 = simulate_multiwavelength(small, InputField(), mod, det, lams, seed=4, threads=1)
    r3 = simulate_multiwavelength(small, InputField(), mod, det, lams, seed=4, threads=3)
    same = r1.intensities.tobytes() == r3.intensities.tobytes()

    ok = const < 1e-12 and single < 1e-12 and power < 1e-9 and shift < 1e-10 and same
    acceptance(8, ok, f"alpha=0 {const:.1e}, M=1 {single:.1e}, power {power:.1e}, "
                      f"shift {shift:.1e}, threads identical={same}")


def test_criterion_9_correlation(acceptance):
    sim = SimConfig()
    sp = spatial_correlation(spatial_record(sim, 600, 0))
    diag = np.abs(np.diag(sp.matrix) - 1).max()
    pr = pulse_response_correlation(sim)
    spread = mode_bases(sim)[0].delay_spread_ns
    ratio = pr.decay / spread if pr.decay is not None else math.nan
    ok = diag < 1e-12 and sp.decay is not None and 0.5 <= sp.decay <= 5 and 0.5 <= ratio <= 2
    acceptance(9, ok, f"C(x,x)-1 {diag:.1e}, xi={sp.decay:.3f} um, t_p={pr.decay:.3f} ns "
                      f"({ratio:.2f}x spread {spread:.3f} ns)")
