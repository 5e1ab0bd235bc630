"""Benchmark protocols: one-step chaotic prediction, memory function, phase sensing."""

from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .fieldsim import CouplingPlan, DetectionSpec, FieldRecord, ModulationSignal, simulate_multiwavelength
from .modeslab import InputField, ModeBasis, WaveguideSpec, solve_modes
from .neuralpost import LbfgsConfig, mlp_predict, train_mlp
from .readout import FeatureMatrix, ReadoutModel, assemble_features, lag_features, predict, train_ridge


class TaskError(ValueError):
    pass


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to turn a symbol sequence into a FieldRecord."""

    spec: WaveguideSpec = WaveguideSpec()
    input_field: InputField = InputField()
    detection: DetectionSpec = DetectionSpec(noise_std=0.04)
    plan: CouplingPlan | None = None
    wavelengths_nm: tuple[float, ...] = (1550.0,)
    symbol_period_ns: float = 0.08
    alpha: float = 1.0
    sim_timestep_ns: float = 0.02
    modulator_bandwidth_ghz: float | None = None
    grid_resolution_um: float | None = None
    threads: int = 1

    def modulation(self, symbols: np.ndarray, alpha: float | None = None,
                   bandwidth_ghz: float | None = None) -> ModulationSignal:
        return ModulationSignal(symbols, symbol_period_ns=self.symbol_period_ns,
                                alpha=self.alpha if alpha is None else alpha,
                                sim_timestep_ns=self.sim_timestep_ns,
                                modulator_bandwidth_ghz=(self.modulator_bandwidth_ghz
                                                         if bandwidth_ghz is None else bandwidth_ghz))


@dataclass(frozen=True)
class ReadoutConfig:
    kind: str = "ridge"  # "ridge" | "mlp"
    gamma: float | None = None  # None: validation search over gamma_grid
    gamma_grid: tuple[float, ...] = tuple(10.0 ** e for e in range(-8, 3))
    validation_fraction: float = 0.2
    hidden: int = 150
    l2: float = 1e-4
    max_iterations: int = 300

    def __post_init__(self):
        if self.kind not in ("ridge", "mlp"):
            raise TaskError(f"readout kind must be 'ridge' or 'mlp', got {self.kind!r}")
        if self.gamma is not None and self.gamma < 0:
            raise TaskError("gamma must be non-negative")


@functools.lru_cache(maxsize=32)
def _cached_basis(spec: WaveguideSpec, resolution: float | None) -> ModeBasis:
    return solve_modes(spec, resolution)


def mode_bases(sim: SimConfig) -> list[ModeBasis]:
    return [_cached_basis(sim.spec.with_wavelength(w), sim.grid_resolution_um) for w in sim.wavelengths_nm]


def simulate(sim: SimConfig, mod: ModulationSignal, seed: int) -> FieldRecord:
    return simulate_multiwavelength(sim.spec, sim.input_field, mod, sim.detection, sim.wavelengths_nm,
                                    plan=sim.plan, seed=seed, threads=sim.threads,
                                    bases=mode_bases(sim))


def warmup_symbols(sim: SimConfig) -> int:
    t_max = max(float(b.group_delay_ns.max()) for b in mode_bases(sim))
    return int(math.ceil(t_max / sim.symbol_period_ns)) + 1


# -- data ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TaskDataset:
    u: np.ndarray
    y_tag: np.ndarray
    train_len: int = 3000
    test_len: int = 1000
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.u.shape != self.y_tag.shape:
            raise TaskError("input and target sequences differ in length")
        if self.u.size < self.train_len + self.test_len:
            raise TaskError(
                f"sequence of {self.u.size} samples is shorter than train + test "
                f"({self.train_len} + {self.test_len})"
            )


@dataclass(frozen=True, eq=False)
class PhaseSignal:
    phi: np.ndarray
    phi_max: float
    symbol_rate_ghz: float

    def __post_init__(self):
        if np.any(np.abs(self.phi) > self.phi_max * (1 + 1e-12)):
            raise TaskError("phase exceeds phi_max")

    @property
    def increments(self) -> np.ndarray:
        """Delta phi(n) = phi(n) - phi(n-1), with phi(-1) = 0."""
        return np.diff(self.phi, prepend=0.0)


def mackey_glass(n: int, sample_every: float = 6.0, dt: float = 0.1, tau: float = 17.0,
                 seed: int = 0, discard: float = 1000.0, beta: float = 0.2, gamma: float = 0.1,
                 power: float = 10.0, jitter: float = 0.2) -> np.ndarray:
    """Mackey-Glass delay equation dx/dt = beta x(t-tau)/(1+x(t-tau)^p) - gamma x, RK4.

    The delayed value at the half step is the mean of neighbouring history samples.
    The initial history is 1.2 plus seeded uniform jitter of +-``jitter``.
    """
    rng = np.random.default_rng(seed)
    d = int(round(tau / dt))
    per = int(round(sample_every / dt))
    if per < 1 or d < 1:
        raise TaskError("sample_every and tau must be at least one integration step")
    skip = int(round(discard / dt))
    total = n * per + skip
    x = np.empty(total + d + 1)
    x[: d + 1] = 1.2 + jitter * rng.uniform(-1.0, 1.0, d + 1)

    def f(xt, xd):
        return beta * xd / (1.0 + xd**power) - gamma * xt

    for i in range(d, d + total):
        xd0, xd1 = x[i - d], x[i - d + 1]
        xdm = 0.5 * (xd0 + xd1)
        xi = x[i]
        k1 = f(xi, xd0)
        k2 = f(xi + 0.5 * dt * k1, xdm)
        k3 = f(xi + 0.5 * dt * k2, xdm)
        k4 = f(xi + dt * k3, xd1)
        x[i + 1] = xi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x[d + skip::per][:n].copy()


def lorenz_x(n: int, sample_every: float = 0.05, dt: float = 0.01, seed: int = 0,
             discard: float = 50.0, sigma: float = 10.0, rho: float = 28.0,
             beta: float = 8.0 / 3.0) -> np.ndarray:
    """First coordinate of the Lorenz-63 system, RK4 from a seeded start near (1, 1, 1)."""
    rng = np.random.default_rng(seed)
    s = np.array([1.0, 1.0, 1.0]) + 0.1 * rng.standard_normal(3)
    per = int(round(sample_every / dt))
    if per < 1:
        raise TaskError("sample_every must be at least one integration step")
    skip = int(round(discard / dt))

    def f(v):
        return np.array([sigma * (v[1] - v[0]), v[0] * (rho - v[2]) - v[1], v[0] * v[1] - beta * v[2]])

    out = np.empty(n)
    for i in range(skip + n * per):
        k1 = f(s)
        k2 = f(s + 0.5 * dt * k1)
        k3 = f(s + 0.5 * dt * k2)
        k4 = f(s + dt * k3)
        s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        j = i + 1 - skip
        if j > 0 and j % per == 0:
            out[j // per - 1] = s[0]
    return out


def _read_series(path: Path) -> np.ndarray:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise TaskError(f"cannot read series file {path}: {exc}") from None
    vals = []
    for k, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            vals.append(float(line))
        except ValueError:
            raise TaskError(f"{path}:{k}: not a number: {line!r}") from None
    return np.asarray(vals)


def load_or_generate_series(source: str | Path = "mackey_glass", seed: int = 0, length: int = 4100,
                            train_len: int = 3000, test_len: int = 1000,
                            **surrogate) -> TaskDataset:
    """Normalized one-step-ahead dataset: y_tag(n) = u(n + 1).

    ``source`` is a file path (one number per line) or a surrogate name,
    ``"mackey_glass"`` or ``"lorenz"``. A file longer than ``length + 1`` is truncated.
    """
    name = str(source)
    if name == "mackey_glass":
        x = mackey_glass(length + 1, seed=seed, **surrogate)
    elif name == "lorenz":
        x = lorenz_x(length + 1, seed=seed, **surrogate)
    else:
        path = Path(source)
        if not path.is_file():
            raise TaskError(f"series file not found: {path}")
        x = _read_series(path)
        if x.size < 2:
            raise TaskError("series needs at least two samples")
        x = x[: length + 1]
    mean, std = float(x.mean()), float(x.std())
    if not std > 0:
        raise TaskError("series has zero variance and cannot be normalized")
    x = (x - mean) / std
    return TaskDataset(u=x[:-1].copy(), y_tag=x[1:].copy(), train_len=train_len, test_len=test_len,
                       normalization={"source": name, "mean": mean, "std": std, "seed": seed})


# -- metrics -------------------------------------------------------------------


def nmse(y, y_tag) -> float:
    """sum (y - y_tag)^2 / sum (y_tag - mean y_tag)^2."""
    y = np.asarray(y, dtype=float).ravel()
    t = np.asarray(y_tag, dtype=float).ravel()
    if y.size != t.size or t.size < 2:
        raise TaskError("nmse needs two equal-length sequences of at least 2 samples")
    den = float(np.sum((t - t.mean()) ** 2))
    if not den > 0:
        raise TaskError("target has zero variance; NMSE is undefined")
    return float(np.sum((y - t) ** 2) / den)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float) - np.mean(a)
    b = np.asarray(b, dtype=float) - np.mean(b)
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b / den) if den > 0 else 0.0


def memory_value(y, y_tag, remove_mean: bool = True) -> float:
    """Squared normalized correlation; ``remove_mean=False`` keeps raw second moments."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(y_tag, dtype=float)
    if remove_mean:
        return pearson(y, t) ** 2
    den = float(y @ y) * float(t @ t)
    return float((y @ t) ** 2 / den) if den > 0 else 0.0


# -- shared pipeline -----------------------------------------------------------


def _split(F: FeatureMatrix, train_len: int, test_len: int) -> tuple[FeatureMatrix, FeatureMatrix]:
    if F.n_rows < train_len + test_len:
        raise TaskError(f"only {F.n_rows} feature rows after warm-up; need {train_len + test_len}")
    return F.take(slice(0, train_len)), F.take(slice(train_len, train_len + test_len))


def fit_readout(train: FeatureMatrix, y: np.ndarray, cfg: ReadoutConfig, seed: int = 0):
    """Returns (model, predict_fn)."""
    if cfg.kind == "ridge":
        model = train_ridge(train, y, gamma=cfg.gamma, validation_fraction=cfg.validation_fraction,
                            gamma_grid=cfg.gamma_grid)
        return model, lambda F: predict(model, F)
    cols = slice(1, None) if train.has_bias else slice(None)
    model, res = train_mlp(train.X[:, cols], y, hidden=cfg.hidden, l2=cfg.l2,
                           cfg=LbfgsConfig(max_iterations=cfg.max_iterations, seed=seed))
    model.config["status"] = res.status
    model.config["iterations"] = res.iterations
    return model, lambda F: mlp_predict(model, F.X[:, cols])


@dataclass
class TaskReport:
    task: str
    metrics: dict
    series: dict  # column name -> 1-D array, written as CSV
    model: ReadoutModel | object | None = None
    feature_shape: tuple[int, int] | None = None

    def metrics_json(self) -> str:
        return json.dumps(self.metrics, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path, stem: str | None = None) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.task
        paths = [out / f"{stem}_metrics.json", out / f"{stem}_series.csv"]
        paths[0].write_text(self.metrics_json(), encoding="utf-8")
        cols = list(self.series)
        with open(paths[1], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(self.series[c] for c in cols)):
                w.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v) for v in row])
        if self.model is not None and hasattr(self.model, "to_json"):
            p = out / f"{stem}_model.json"
            p.write_text(json.dumps(self.model.to_json(), sort_keys=True), encoding="utf-8")
            paths.append(p)
        return paths


@dataclass
class DelayModels:
    """One trained readout per memory delay, serialized together."""

    models: list

    def to_json(self) -> dict:
        return {"kind": "delay_models", "delays": [m.to_json() for m in self.models]}


# -- tasks -----------------------------------------------------------------------


def run_prediction_task(dataset: TaskDataset, sim: SimConfig = SimConfig(),
                        readout: ReadoutConfig = ReadoutConfig(), seed: int = 0,
                        ar_lags: int = 3) -> TaskReport:
    """Modulate, simulate, detect, assemble, train on the first T_n rows, test on the next."""
    rec = simulate(sim, sim.modulation(dataset.u), seed)
    F = assemble_features(rec, sim.detection.samples_per_symbol)
    first = max(F.rows[0], ar_lags - 1)
    F = F.take(F.rows >= first)
    train, test = _split(F, dataset.train_len, dataset.test_len)
    y_tr, y_te = dataset.y_tag[train.rows], dataset.y_tag[test.rows]
    model, pred = fit_readout(train, y_tr, readout, seed)
    p_tr, p_te = pred(train), pred(test)

    lag_tr = lag_features(dataset.u, train.rows, ar_lags)
    lag_te = lag_features(dataset.u, test.rows, ar_lags)
    ar = train_ridge(lag_tr, y_tr, gamma=readout.gamma, validation_fraction=readout.validation_fraction,
                     gamma_grid=readout.gamma_grid)
    p_ar = predict(ar, lag_te)
    metrics = {
        "task": "predict",
        "nmse_train": nmse(p_tr, y_tr),
        "nmse_test": nmse(p_te, y_te),
        "correlation": pearson(p_te, y_te),
        "ar_baseline_nmse": nmse(p_ar, y_te),
        "ar_lags": ar_lags,
        "n_features": F.n_cols,
        "first_row": int(train.rows[0]),
        "readout": readout.kind,
        "gamma": getattr(model, "gamma", None),
        "seed": seed,
        "normalization": dataset.normalization,
    }
    series = {"n": test.rows, "y": p_te, "y_tag": y_te, "y_ar": p_ar}
    return TaskReport("predict", metrics, series, model, (F.n_rows, F.n_cols))


def run_memory_task(sim: SimConfig = SimConfig(), readout: ReadoutConfig = ReadoutConfig(),
                    max_delay: int = 20, seed: int = 0, train_len: int = 3000, test_len: int = 1000,
                    remove_mean: bool = True) -> TaskReport:
    """m(i) for the delayed-increment targets y_tag(n, i) = u(n+1-i) - u(n-i), i = 0..max_delay."""
    if max_delay < 1:
        raise TaskError("max_delay must be >= 1")
    first = max(warmup_symbols(sim), max_delay + 1)
    n = first + train_len + test_len
    u = np.random.default_rng(seed).uniform(-1.0, 1.0, n + 1)
    rec = simulate(sim, sim.modulation(u), seed)
    F = assemble_features(rec, sim.detection.samples_per_symbol, first_row=first)
    train, test = _split(F, train_len, test_len)
    m = np.empty(max_delay + 1)
    models = []
    for i in range(max_delay + 1):
        target = lambda rows: u[rows + 1 - i] - u[rows - i]  # noqa: E731
        model, pred = fit_readout(train, target(train.rows), readout, seed)
        models.append(model)
        m[i] = memory_value(pred(test), target(test.rows), remove_mean)
    above = np.nonzero(m[1:] > 0.5)[0]
    metrics = {
        "task": "memory",
        "memory_function": m.tolist(),
        "effective_memory": int(above[-1] + 1) if above.size else 0,
        "memory_capacity": float(m[1:].sum()),
        "remove_mean": remove_mean,
        "max_delay": max_delay,
        "n_features": F.n_cols,
        "seed": seed,
    }
    return TaskReport("memory", metrics, {"i": np.arange(max_delay + 1), "m": m},
                      DelayModels(models), (F.n_rows, F.n_cols))


@dataclass(frozen=True)
class PhaseTaskConfig:
    phi_max: float = 1.2 * math.pi
    symmetric: bool = False  # uniform on [-phi_max, phi_max] instead of [0, phi_max]
    modulator_bandwidth_ghz: float | None = 16.0
    train_len: int = 3000
    test_len: int = 1000


def make_phase_signal(n: int, cfg: PhaseTaskConfig, symbol_period_ns: float, seed: int) -> PhaseSignal:
    rng = np.random.default_rng(seed)
    lo = -cfg.phi_max if cfg.symmetric else 0.0
    return PhaseSignal(rng.uniform(lo, cfg.phi_max, n), cfg.phi_max, 1.0 / symbol_period_ns)


def reconstruct_phase(y: np.ndarray, phi_start: float = 0.0) -> np.ndarray:
    """phi_hat(n) = phi_start + sum_{n' <= n} y(n')."""
    return phi_start + np.cumsum(y)


def run_phase_task(sim: SimConfig = SimConfig(), readout: ReadoutConfig = ReadoutConfig(),
                   seed: int = 0, cfg: PhaseTaskConfig = PhaseTaskConfig(),
                   features: FeatureMatrix | None = None,
                   signal: PhaseSignal | None = None) -> TaskReport:
    """Regress the per-symbol phase increment from the detected field.

    The phase is written directly onto the carrier (alpha = 1 rad per unit).
    ``features`` and ``signal`` let several readouts share one simulation.
    """
    if signal is None or features is None:
        features, signal = phase_features(sim, cfg, seed)
    d = signal.increments
    train, test = _split(features, cfg.train_len, cfg.test_len)
    model, pred = fit_readout(train, d[train.rows], readout, seed)
    p, t = pred(test), d[test.rows]
    n0 = int(test.rows[0])
    phi_hat = reconstruct_phase(p, float(signal.phi[n0 - 1]))
    drift = phi_hat - signal.phi[test.rows]
    metrics = {
        "task": "phase",
        "readout": readout.kind,
        "nmse": nmse(p, t),
        "correlation": pearson(p, t),
        "rmse_in_phimax": float(np.sqrt(np.mean((p - t) ** 2)) / cfg.phi_max),
        "reconstruction_final_drift": float(drift[-1]),
        "reconstruction_rms_drift": float(np.sqrt(np.mean(drift**2))),
        "phi_max": cfg.phi_max,
        "symmetric": cfg.symmetric,
        "n_features": features.n_cols,
        "seed": seed,
    }
    series = {"n": test.rows, "y": p, "y_tag": t, "phi": signal.phi[test.rows], "phi_hat": phi_hat}
    return TaskReport("phase", metrics, series, model, (features.n_rows, features.n_cols))


def phase_features(sim: SimConfig, cfg: PhaseTaskConfig, seed: int) -> tuple[FeatureMatrix, PhaseSignal]:
    """Simulate once for reuse across readouts."""
    signal = make_phase_signal(warmup_symbols(sim) + cfg.train_len + cfg.test_len, cfg,
                               sim.symbol_period_ns, seed)
    mod = sim.modulation(signal.phi, alpha=1.0, bandwidth_ghz=cfg.modulator_bandwidth_ghz)
    return assemble_features(simulate(sim, mod, seed), sim.detection.samples_per_symbol), signal


def wdm_sweep(dataset: TaskDataset, sim: SimConfig, wavelengths_nm: Sequence[float],
              readout: ReadoutConfig = ReadoutConfig(), seed: int = 0) -> list[float]:
    """Test NMSE using the first L = 1..len(wavelengths) carriers of one simulation."""
    full = replace(sim, wavelengths_nm=tuple(wavelengths_nm))
    rec = simulate(full, full.modulation(dataset.u), seed)
    out = []
    for L in range(1, len(wavelengths_nm) + 1):
        F = assemble_features(rec, sim.detection.samples_per_symbol, wavelengths=L)
        train, test = _split(F, dataset.train_len, dataset.test_len)
        model, pred = fit_readout(train, dataset.y_tag[train.rows], readout, seed)
        out.append(nmse(pred(test), dataset.y_tag[test.rows]))
    return out


def config_dict(obj) -> dict:
    return json.loads(json.dumps(asdict(obj), default=list))
