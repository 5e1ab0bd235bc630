"""Correlation diagnostics of the neural field and the MAC-rate estimator."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fieldsim import FieldRecord, ModulationSignal, simulate_multiwavelength
from .tasks import SimConfig, mode_bases

FIT_THRESHOLD = 0.05


class AnalysisError(ValueError):
    pass


@dataclass(eq=False)
class CorrelationReport:
    """``axis`` is the separation (um) or lag (ns) for ``curve``; ``matrix`` is C per pair/probe."""

    kind: str  # "spatial" | "pulse"
    matrix: np.ndarray
    axis: np.ndarray
    curve: np.ndarray
    decay: float | None  # xi (um) or t_p (ns)
    residual: float | None
    fit_window: tuple[float, float] | None
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "decay": self.decay,
            "decay_unit": "um" if self.kind == "spatial" else "ns",
            "fit_residual": self.residual,
            "fit_window": None if self.fit_window is None else list(self.fit_window),
            "fit_threshold": FIT_THRESHOLD,
            "status": self.status,
            **self.extra,
        }

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.kind}_summary.json", out / f"{self.kind}_curve.csv",
                 out / f"{self.kind}_matrix.csv"]
        paths[0].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with open(paths[1], "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["separation_um" if self.kind == "spatial" else "lag_ns", "C_m"])
            w.writerows([repr(float(a)), repr(float(c))] for a, c in zip(self.axis, self.curve))
        with open(paths[2], "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerows([repr(float(v)) for v in row] for row in self.matrix)
        return paths


def fit_window_end(curve: np.ndarray, threshold: float = FIT_THRESHOLD,
                   stop_at_minimum: bool = False) -> int:
    """Length of the leading run with C > threshold, optionally cut at the first local minimum."""
    ok = curve > threshold
    end = int(np.argmin(ok)) if not ok.all() else ok.size
    if stop_at_minimum:
        rises = np.nonzero(np.diff(curve[:end]) >= 0)[0]
        if rises.size:
            end = int(rises[0]) + 1
    return end


def fit_exponential(axis: np.ndarray, curve: np.ndarray, free_amplitude: bool,
                    threshold: float = FIT_THRESHOLD, stop_at_minimum: bool = False):
    """Least squares on log C over the leading run with C > threshold.

    Returns (decay, rms log residual, (start, end), status).
    """
    if not curve[0] > threshold:
        return None, None, None, "no decay"
    end = fit_window_end(curve, threshold, stop_at_minimum)
    x, lc = axis[:end], np.log(curve[:end])
    if end < (3 if free_amplitude else 2):
        return None, None, (float(x[0]), float(x[-1])), "window too short"
    if free_amplitude:
        slope, icept = np.polyfit(x, lc, 1)
        resid = lc - (slope * x + icept)
    else:
        slope = float(x @ lc) / float(x @ x)
        resid = lc - slope * x
    if not slope < 0:
        return None, None, (float(x[0]), float(x[-1])), "no decay"
    return float(-1.0 / slope), float(np.sqrt(np.mean(resid**2))), (float(x[0]), float(x[-1])), "ok"


def _standardize(series: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    z = series - series.mean(axis=-1, keepdims=True)
    sd = np.sqrt(np.mean(z**2, axis=-1))
    keep = sd > 1e-12 * max(1.0, float(np.abs(series).max()))
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} zero-variance {what} excluded", RuntimeWarning, stacklevel=3)
    return z[keep] / sd[keep, None], keep


def spatial_correlation(record: FieldRecord, wavelength: int = 0, start_step: int | None = None,
                        decimals: int = 9) -> CorrelationReport:
    """Pearson correlation over time between probe pairs and its separation-averaged decay.

    C_m(dx) is the mean |C| over pairs at separation dx, fitted as exp(-dx / xi). The fit
    window stops at the first local minimum of C_m: past it the curve sits on a plateau
    set by the finite number of independent temporal patterns, not by the speckle grain.
    Time samples before the warm-up has elapsed are skipped unless ``start_step`` is given.
    """
    n_probes = record.intensities.shape[1]
    if n_probes < 2:
        raise AnalysisError("spatial correlation needs at least 2 probes")
    if start_step is None:
        steps = int(round(record.symbol_period_ns / record.sim_timestep_ns))
        start_step = record.alignment_steps + record.warmup_symbols * steps
    inten = record.intensities[wavelength, :, start_step:]
    if inten.shape[-1] < 100:
        raise AnalysisError(f"need >= 100 time samples, got {inten.shape[-1]}")
    z, keep = _standardize(inten, "probes")
    if z.shape[0] < 2:
        raise AnalysisError("fewer than 2 probes with non-zero variance")
    pos = np.asarray(record.probe_positions_um, dtype=float)[keep]
    C = (z @ z.T) / z.shape[1]
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    sep = np.round(np.abs(pos[:, None] - pos[None, :]), decimals)
    iu = np.triu_indices(pos.size)
    axis, inv = np.unique(sep[iu], return_inverse=True)
    curve = np.bincount(inv, weights=np.abs(C[iu])) / np.bincount(inv)
    xi, res, win, status = fit_exponential(axis, curve, free_amplitude=False, stop_at_minimum=True)
    end = fit_window_end(curve, stop_at_minimum=True)
    floor = float(np.median(curve[end:])) if end < curve.size else None
    return CorrelationReport("spatial", C, axis, curve, xi, res, win, status,
                             {"n_probes": int(pos.size), "n_samples": int(z.shape[1]),
                              "plateau": floor})


def spatial_record(sim: SimConfig = SimConfig(), n_symbols: int = 600, seed: int = 0,
                   noise_free: bool = True) -> FieldRecord:
    """Field driven by i.i.d. uniform [0, 1) symbols for the spatial analysis."""
    u = np.random.default_rng(seed).uniform(0.0, 1.0, n_symbols)
    det = replace(sim.detection, noise_std=0.0) if noise_free else sim.detection
    return simulate_multiwavelength(sim.spec, sim.input_field, sim.modulation(u), det,
                                    sim.wavelengths_nm[:1], plan=sim.plan, seed=seed,
                                    bases=mode_bases(sim)[:1])


def pulse_response_correlation(sim: SimConfig = SimConfig(), pulse_width_ns: float = 0.08,
                               pulse_start_ns: float = 0.2, duration_ns: float = 4.0,
                               max_lag_ns: float = 1.5, noise_free: bool = True,
                               seed: int = 0) -> CorrelationReport:
    """Correlation between a single rectangular pulse u(t) and I(x, t + dt_c).

    The drive is sampled on the simulation grid; lags are counted from the arrival of
    the fastest mode. ``matrix`` holds C(dt_c, x) with lags along rows. C_m is the
    probe-averaged |C|, fitted as A exp(-dt_c / t_p).
    """
    dt = sim.sim_timestep_ns
    if pulse_width_ns < dt:
        raise AnalysisError("pulse width must be at least one simulation timestep")
    n = int(round(duration_ns / dt))
    n_lag = int(round(max_lag_ns / dt))
    if n - n_lag < 2:
        raise AnalysisError("duration must exceed max_lag_ns")
    u = np.zeros(n)
    p0 = int(round(pulse_start_ns / dt))
    u[p0:p0 + int(round(pulse_width_ns / dt))] = 1.0
    mod = ModulationSignal(u, symbol_period_ns=dt, alpha=sim.alpha, sim_timestep_ns=dt,
                           modulator_bandwidth_ghz=sim.modulator_bandwidth_ghz)
    det = replace(sim.detection, noise_std=0.0) if noise_free else sim.detection
    bases = mode_bases(sim)[:1]
    rec = simulate_multiwavelength(sim.spec, sim.input_field, mod, det, sim.wavelengths_nm[:1],
                                   plan=sim.plan, seed=seed, bases=bases)
    inten = rec.intensities[0]
    a = rec.alignment_steps
    width = n - n_lag
    uu = u[:width] - u[:width].mean()
    su = math.sqrt(float(np.mean(uu**2)))
    if su == 0:
        raise AnalysisError("the pulse does not fit inside the correlation window")
    C = np.zeros((n_lag, inten.shape[0]))
    for k in range(n_lag):
        seg = inten[:, a + k:a + k + width]
        seg = seg - seg.mean(axis=1, keepdims=True)
        sd = np.sqrt(np.mean(seg**2, axis=1))
        live = sd > 1e-12 * max(1.0, float(np.abs(inten).max()))
        C[k, live] = (seg[live] @ uu) / width / (su * sd[live])
    lags = np.arange(n_lag) * dt
    curve = np.abs(C).mean(axis=1)
    flat = not np.any(curve > 1e-9)
    if flat:
        tp, res, win, status = None, None, None, "no decay"
    else:
        tp, res, win, status = fit_exponential(lags, curve, free_amplitude=True)
    spread = float(bases[0].delay_spread_ns)
    return CorrelationReport("pulse", C, lags, curve, tp, res, win, status,
                             {"pulse_width_ns": pulse_width_ns, "delay_spread_ns": spread,
                              "n_modes": bases[0].n_modes,
                              "peak_lag_ns": float(lags[int(np.argmax(curve))])})


@dataclass(frozen=True)
class MacEstimate:
    N: int
    M: int
    K: int
    tau_ns: float
    footprint_mm2: float | None = None

    def __post_init__(self):
        if min(self.N, self.M, self.K) < 1 or not self.tau_ns > 0:
            raise AnalysisError("N, M, K and tau must be positive")
        if self.footprint_mm2 is not None and not self.footprint_mm2 > 0:
            raise AnalysisError("footprint must be positive")

    @property
    def dt_s(self) -> float:
        return self.tau_ns * 1e-9 / self.K

    @property
    def mac_per_second(self) -> float:
        return 2.0 * (3 * self.N * self.M + self.M - 1) / self.dt_s

    @property
    def mac_per_second_per_mm2(self) -> float | None:
        return None if self.footprint_mm2 is None else self.mac_per_second / self.footprint_mm2

    def to_json(self) -> dict:
        return {"N": self.N, "M": self.M, "K": self.K, "tau_ns": self.tau_ns, "dt_ns": self.dt_s * 1e9,
                "mac_per_second": self.mac_per_second, "footprint_mm2": self.footprint_mm2,
                "mac_per_second_per_mm2": self.mac_per_second_per_mm2}

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        p = out / "mac.json"
        p.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return [p]


def mac_rate(N: int, M: int, K: int, tau_ns: float, footprint_mm2: float | None = None) -> MacEstimate:
    """Equivalent MAC/s of the propagation: 2(3NM + M - 1)/dt with dt = tau / K."""
    return MacEstimate(int(N), int(M), int(K), float(tau_ns), footprint_mm2)
