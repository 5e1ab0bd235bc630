"""Experiment configuration: one JSON document, dotted overrides, content hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .fieldsim import CouplingPlan, DetectionSpec
from .modeslab import InputField, WaveguideSpec
from .tasks import PhaseTaskConfig, ReadoutConfig, SimConfig

# fields that change how a run executes but not what it computes
NON_SEMANTIC = ("threads", "output_dir")


class ConfigError(ValueError):
    pass


@dataclass
class WaveguideSection:
    width_um: float = 25.0
    length_mm: float = 39.0
    n_core: float = 2.556
    n_clad: float = 1.444
    wavelength_nm: float = 1550.0
    grid_resolution_um: float | None = None


@dataclass
class InputSection:
    spot_width_um: float = 0.5
    center_offset_um: float = 2.0
    sample_positions_um: list | None = None
    sample_values: list | None = None


@dataclass
class ModulationSection:
    symbol_period_ns: float = 0.08
    alpha: float = 1.0
    sim_timestep_ns: float = 0.02
    modulator_bandwidth_ghz: float | None = None


@dataclass
class DetectionSection:
    probe_start_um: float = -12.5
    probe_stop_um: float = 12.5
    n_probes: int = 65
    probe_positions_um: list | None = None  # overrides the uniform layout
    spot_fwhm_um: float = 2.0
    samples_per_symbol: int = 4
    detector_bandwidth_ghz: float | None = None
    ac_coupled: bool = False
    noise_std: float = 0.04


@dataclass
class CouplingSection:
    segments: int = 1
    strength: float = 0.0
    bandwidth: int = 1
    rng_seed: int = 0


@dataclass
class ReadoutSection:
    kind: str = "ridge"
    gamma: float | None = None
    gamma_grid: list = field(default_factory=lambda: [10.0 ** e for e in range(-8, 3)])
    validation_fraction: float = 0.2
    hidden: int = 150
    l2: float = 1e-4
    max_iterations: int = 300


@dataclass
class PredictSection:
    source: str = "mackey_glass"
    length: int = 4100
    sample_every: float = 6.0
    train_len: int = 3000
    test_len: int = 1000
    ar_lags: int = 3


@dataclass
class MemorySection:
    max_delay: int = 20
    remove_mean: bool = True
    train_len: int = 3000
    test_len: int = 1000


@dataclass
class PhaseSection:
    phi_max_rad: float = 1.2 * math.pi
    symmetric: bool = False
    modulator_bandwidth_ghz: float | None = 16.0
    train_len: int = 3000
    test_len: int = 1000


@dataclass
class SpatialSection:
    n_symbols: int = 600
    noise_free: bool = True


@dataclass
class PulseSection:
    pulse_width_ns: float = 0.08
    pulse_start_ns: float = 0.2
    duration_ns: float = 4.0
    max_lag_ns: float = 1.5
    noise_free: bool = True


@dataclass
class MacSection:
    N: int | None = None  # default: probe count
    M: int | None = None  # default: solved mode count
    K: int | None = None  # default: samples per symbol
    footprint_mm2: float | None = 4.8


@dataclass
class ExperimentConfig:
    seed: int = 0
    waveguide: WaveguideSection = field(default_factory=WaveguideSection)
    input: InputSection = field(default_factory=InputSection)
    modulation: ModulationSection = field(default_factory=ModulationSection)
    detection: DetectionSection = field(default_factory=DetectionSection)
    coupling: CouplingSection = field(default_factory=CouplingSection)
    wavelengths_nm: list = field(default_factory=lambda: [1550.0])
    readout: ReadoutSection = field(default_factory=ReadoutSection)
    predict: PredictSection = field(default_factory=PredictSection)
    memory: MemorySection = field(default_factory=MemorySection)
    phase: PhaseSection = field(default_factory=PhaseSection)
    spatial: SpatialSection = field(default_factory=SpatialSection)
    pulse: PulseSection = field(default_factory=PulseSection)
    mac: MacSection = field(default_factory=MacSection)
    threads: int = 1
    output_dir: str = "out"

    # -- serialization --

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict, require_seed: bool = True) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if require_seed and "seed" not in doc:
            raise ConfigError("seed: required (no implicit seeding)")
        cfg = cls()
        for key, val in doc.items():
            _assign(cfg, key, val, key)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def content_hash(self) -> str:
        doc = {k: v for k, v in self.to_dict().items() if k not in NON_SEMANTIC}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def override(self, assignment: str) -> None:
        """Apply ``dotted.path=value``; the value is parsed as JSON, else kept as a string."""
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        path, raw = assignment.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        parts = path.strip().split(".")
        target: Any = self
        for p in parts[:-1]:
            if not dataclasses.is_dataclass(target) or not hasattr(target, p):
                raise ConfigError(f"{path}: unknown config key")
            target = getattr(target, p)
        _assign(target, parts[-1], val, path)

    # -- building domain objects --

    def waveguide_spec(self) -> WaveguideSpec:
        w = self.waveguide
        return _wrap("waveguide", lambda: WaveguideSpec(w.width_um, w.length_mm, w.n_core, w.n_clad,
                                                          w.wavelength_nm))

    def sim_config(self) -> SimConfig:
        self.validate()
        return self._sim

    def readout_config(self) -> ReadoutConfig:
        r = self.readout
        return _wrap("readout", lambda: ReadoutConfig(kind=r.kind, gamma=r.gamma,
                                                      gamma_grid=tuple(float(g) for g in r.gamma_grid),
                                                      validation_fraction=r.validation_fraction,
                                                      hidden=r.hidden, l2=r.l2,
                                                      max_iterations=r.max_iterations))

    def phase_config(self) -> PhaseTaskConfig:
        p = self.phase
        if p.phi_max_rad < 0:
            raise ConfigError("phase.phi_max_rad: must be non-negative")
        return PhaseTaskConfig(phi_max=p.phi_max_rad, symmetric=p.symmetric,
                               modulator_bandwidth_ghz=p.modulator_bandwidth_ghz,
                               train_len=p.train_len, test_len=p.test_len)

    def probe_positions(self) -> tuple[float, ...]:
        d = self.detection
        if d.probe_positions_um is not None:
            return tuple(float(x) for x in d.probe_positions_um)
        if d.n_probes < 1:
            raise ConfigError("detection.n_probes: must be >= 1")
        if d.n_probes == 1:
            return (0.5 * (d.probe_start_um + d.probe_stop_um),)
        return tuple(float(x) for x in np.linspace(d.probe_start_um, d.probe_stop_um, d.n_probes))

    def validate(self) -> None:
        """Build every sub-module object so precondition failures surface before a run."""
        spec = self.waveguide_spec()
        i = self.input
        inp = _wrap("input", lambda: InputField(
            spot_width_um=i.spot_width_um, center_offset_um=i.center_offset_um,
            shape="gaussian" if i.sample_positions_um is None else "samples",
            sample_positions=None if i.sample_positions_um is None else tuple(i.sample_positions_um),
            sample_values=None if i.sample_values is None else tuple(i.sample_values)))
        d = self.detection
        det = _wrap("detection", lambda: DetectionSpec(
            probe_positions_um=self.probe_positions(), spot_fwhm_um=d.spot_fwhm_um,
            samples_per_symbol=d.samples_per_symbol, detector_bandwidth_ghz=d.detector_bandwidth_ghz,
            ac_coupled=d.ac_coupled, noise_std=d.noise_std))
        c = self.coupling
        plan = _wrap("coupling", lambda: CouplingPlan(c.segments, c.strength, c.bandwidth, c.rng_seed))
        if c.segments == 1:
            plan = None
        if not self.wavelengths_nm or any(not float(w) > 0 for w in self.wavelengths_nm):
            raise ConfigError("wavelengths_nm: need one or more positive wavelengths")
        m = self.modulation
        if m.symbol_period_ns <= 0 or m.sim_timestep_ns <= 0:
            raise ConfigError("modulation: symbol_period_ns and sim_timestep_ns must be positive")
        steps = m.symbol_period_ns / m.sim_timestep_ns
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ConfigError("modulation.sim_timestep_ns: must divide symbol_period_ns")
        if round(steps) % d.samples_per_symbol:
            raise ConfigError("detection.samples_per_symbol: must divide the simulation steps per symbol")
        if m.modulator_bandwidth_ghz is not None and not m.modulator_bandwidth_ghz > 0:
            raise ConfigError("modulation.modulator_bandwidth_ghz: must be positive or null")
        if self.threads < 1:
            raise ConfigError("threads: must be >= 1")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed: must be a non-negative integer")
        self.readout_config()
        self.phase_config()
        self._sim = SimConfig(spec=spec, input_field=inp, detection=det, plan=plan,
                              wavelengths_nm=tuple(float(w) for w in self.wavelengths_nm),
                              symbol_period_ns=m.symbol_period_ns, alpha=m.alpha,
                              sim_timestep_ns=m.sim_timestep_ns,
                              modulator_bandwidth_ghz=m.modulator_bandwidth_ghz,
                              grid_resolution_um=self.waveguide.grid_resolution_um,
                              threads=self.threads)


def _wrap(section: str, build):
    try:
        return build()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _type_ok(default, val) -> bool:
    if isinstance(default, bool):
        return isinstance(val, bool)
    if isinstance(default, (int, float)):
        return isinstance(val, (int, float)) and not isinstance(val, bool)
    if isinstance(default, str):
        return isinstance(val, str)
    if isinstance(default, list):
        return isinstance(val, list)
    return val is None or isinstance(val, (int, float, str, list)) and not isinstance(val, bool)


def _assign(obj, key: str, val, path: str) -> None:
    names = {f.name for f in dataclasses.fields(obj)}
    if key not in names:
        raise ConfigError(f"{path}: unknown config key")
    cur = getattr(obj, key)
    if dataclasses.is_dataclass(cur):
        if not isinstance(val, dict):
            raise ConfigError(f"{path}: expected an object")
        for k, v in val.items():
            _assign(cur, k, v, f"{path}.{k}")
        return
    if not _type_ok(cur, val):
        raise ConfigError(f"{path}: value {val!r} has the wrong type (expected like {cur!r})")
    if isinstance(cur, int) and not isinstance(cur, bool) and not isinstance(cur, float):
        if isinstance(val, float):
            if not val.is_integer():
                raise ConfigError(f"{path}: expected an integer, got {val!r}")
            val = int(val)
    if isinstance(cur, float) and isinstance(val, int):
        val = float(val)
    setattr(obj, key, val)
