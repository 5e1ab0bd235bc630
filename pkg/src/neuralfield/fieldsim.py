"""Propagation of a phase-modulated carrier through the mode basis and detection.

Without inter-modal coupling each mode delays the modulation by its group delay:

    E(x, t) = sum_m a_m Psi_m(x) exp(-i beta_m L) exp(i alpha u(t - t_m))

with the carrier factored out. A :class:`CouplingPlan` splits the guide into
segments joined by banded unitary mixers; the resulting impulse response is a
finite set of delay taps, which is evaluated exactly against the piecewise
constant drive.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .modeslab import InputField, ModeBasis, WaveguideSpec, coupling_coefficients, solve_modes


class FieldSimError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModulationSignal:
    """Symbol sequence held for one period each and written onto the optical phase.

    ``alpha`` is the phase swing in radians per unit of ``u``. When
    ``modulator_bandwidth_ghz`` is set the drive passes through a first-order
    low-pass before reaching the phase (zero-order hold otherwise). Symbols
    before ``n = 0`` are taken as 0.
    """

    symbols: np.ndarray
    symbol_period_ns: float = 0.08
    alpha: float = 1.0
    sim_timestep_ns: float = 0.02
    modulator_bandwidth_ghz: float | None = None

    def __post_init__(self):
        u = np.asarray(self.symbols, dtype=float)
        object.__setattr__(self, "symbols", u)
        if u.ndim != 1 or u.size == 0:
            raise FieldSimError("symbols must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(u)):
            raise FieldSimError("symbols must be finite")
        if self.symbol_period_ns <= 0 or self.sim_timestep_ns <= 0:
            raise FieldSimError("symbol period and timestep must be positive")
        ratio = self.symbol_period_ns / self.sim_timestep_ns
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise FieldSimError(
                f"sim_timestep {self.sim_timestep_ns} ns does not divide symbol period "
                f"{self.symbol_period_ns} ns"
            )

    @property
    def steps_per_symbol(self) -> int:
        return int(round(self.symbol_period_ns / self.sim_timestep_ns))

    @property
    def n_symbols(self) -> int:
        return int(self.symbols.size)

    def _filter_states(self) -> np.ndarray:
        # low-pass output at each symbol boundary, starting from rest
        tc = 1.0 / (2 * math.pi * self.modulator_bandwidth_ghz)
        r = math.exp(-self.symbol_period_ns / tc)
        u = self.symbols
        states = np.zeros(u.size + 1)
        states[1:] = lfilter([1 - r], [1, -r], u)
        return states

    def phase_at(self, step_index: np.ndarray, delay_ns: float) -> np.ndarray:
        """alpha * u(t - delay) at times t = step_index * sim_timestep."""
        steps = self.steps_per_symbol
        dsteps = delay_ns / self.sim_timestep_ns
        whole = math.floor(dsteps)
        frac = dsteps - whole
        r = np.asarray(step_index, dtype=np.int64) - whole
        # exact integer form of floor((r - frac) / steps)
        sym = (r // steps) if frac == 0.0 else ((r - 1) // steps)
        valid = (sym >= 0) & (sym < self.n_symbols)
        idx = np.clip(sym, 0, self.n_symbols - 1)
        if self.modulator_bandwidth_ghz is None:
            return np.where(valid, self.alpha * self.symbols[idx], 0.0)
        tc = 1.0 / (2 * math.pi * self.modulator_bandwidth_ghz)
        states = self._filter_states()
        elapsed = ((r - sym * steps) - frac) * self.sim_timestep_ns
        target = np.where(valid, self.symbols[idx], 0.0)
        start = states[np.clip(sym, 0, self.n_symbols)]
        val = target + (start - target) * np.exp(-elapsed / tc)
        # after the last symbol the drive relaxes back to zero
        return np.where(sym < 0, 0.0, self.alpha * val)

    def shifted(self, n: int) -> "ModulationSignal":
        """Same drive delayed by ``n`` whole symbols (zeros prepended)."""
        u = np.concatenate([np.zeros(n), self.symbols[: self.n_symbols - n]])
        return replace(self, symbols=u)


@dataclass(frozen=True)
class CouplingPlan:
    segments: int = 1
    coupling_strength: float = 0.0
    bandwidth: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.segments < 1:
            raise FieldSimError("segments must be >= 1")
        if not 0.0 <= self.coupling_strength <= 1.0:
            raise FieldSimError("coupling_strength must lie in [0, 1]")
        if self.bandwidth < 1:
            raise FieldSimError("bandwidth must be >= 1")


@dataclass(frozen=True)
class DetectionSpec:
    probe_positions_um: tuple[float, ...] = tuple(np.linspace(-12.5, 12.5, 65))
    spot_fwhm_um: float = 2.0
    samples_per_symbol: int = 4
    detector_bandwidth_ghz: float | None = None
    ac_coupled: bool = False
    noise_std: float = 0.0

    def __post_init__(self):
        if len(self.probe_positions_um) < 1:
            raise FieldSimError("need at least one probe position")
        if self.samples_per_symbol < 1:
            raise FieldSimError("samples_per_symbol must be >= 1")
        if self.spot_fwhm_um < 0 or self.noise_std < 0:
            raise FieldSimError("spot_fwhm_um and noise_std must be non-negative")

    @property
    def n_probes(self) -> int:
        return len(self.probe_positions_um)


@dataclass(frozen=True, eq=False)
class ComplexField:
    values: np.ndarray  # (n_points, n_times)
    positions_um: np.ndarray
    step_index: np.ndarray
    sim_timestep_ns: float
    alignment_steps: int
    warmup_symbols: int


@dataclass(frozen=True, eq=False)
class FieldRecord:
    """Detected intensities, shape (n_wavelengths, n_probes, n_times)."""

    intensities: np.ndarray
    step_index: np.ndarray
    sim_timestep_ns: float
    symbol_period_ns: float
    n_symbols: int
    probe_positions_um: np.ndarray
    wavelengths_nm: tuple[float, ...]
    alignment_steps: int
    warmup_symbols: int

    @property
    def times_ns(self) -> np.ndarray:
        return self.step_index * self.sim_timestep_ns

    @property
    def n_wavelengths(self) -> int:
        return self.intensities.shape[0]

    def select_wavelengths(self, count: int) -> "FieldRecord":
        return replace(self, intensities=self.intensities[:count],
                       wavelengths_nm=self.wavelengths_nm[:count])

    def to_csv(self, path: str | Path) -> None:
        cols = [f"I(x={x:.6g}um,lambda={lam:.6g}nm)" for lam in self.wavelengths_nm
                for x in self.probe_positions_um]
        data = self.intensities.reshape(-1, self.intensities.shape[-1]).T
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("time_ns," + ",".join(cols) + "\n")
            for t, row in zip(self.times_ns, data):
                fh.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row) + "\n")

    def to_binary(self, path: str | Path) -> None:
        """Little-endian dump: magic, three uint64 dims (L, N, T), float64 metadata, data.

        Metadata block: sim_timestep_ns, symbol_period_ns, then N probe positions and
        L wavelengths, then L*N*T intensities in C order.
        """
        n_l, n_p, n_t = self.intensities.shape
        with open(path, "wb") as fh:
            fh.write(b"NFREC001")
            fh.write(struct.pack("<3Q", n_l, n_p, n_t))
            fh.write(struct.pack("<2d", self.sim_timestep_ns, self.symbol_period_ns))
            fh.write(np.asarray(self.probe_positions_um, "<f8").tobytes())
            fh.write(np.asarray(self.wavelengths_nm, "<f8").tobytes())
            fh.write(np.ascontiguousarray(self.intensities, "<f8").tobytes())

    @staticmethod
    def read_binary(path: str | Path) -> dict:
        raw = Path(path).read_bytes()
        if raw[:8] != b"NFREC001":
            raise FieldSimError("not a field-record file")
        n_l, n_p, n_t = struct.unpack_from("<3Q", raw, 8)
        dt, tau = struct.unpack_from("<2d", raw, 32)
        off = 48
        pos = np.frombuffer(raw, "<f8", n_p, off)
        off += 8 * n_p
        lams = np.frombuffer(raw, "<f8", n_l, off)
        off += 8 * n_l
        data = np.frombuffer(raw, "<f8", n_l * n_p * n_t, off).reshape(n_l, n_p, n_t)
        return {"sim_timestep_ns": dt, "symbol_period_ns": tau, "probe_positions_um": pos,
                "wavelengths_nm": lams, "intensities": data}


# -- coupling -----------------------------------------------------------------


def mixing_matrix(n_modes: int, strength: float, bandwidth: int, rng: np.random.Generator) -> np.ndarray:
    """Banded unitary built from ``bandwidth`` brick-wall layers of 2x2 rotations.

    At strength 1 each 2x2 block is Haar-distributed on SU(2) (|U11|^2 uniform on
    [0, 1]); the mixing angle and phases scale with ``strength``, so 0 gives the identity.
    """
    u = np.eye(n_modes, dtype=complex)
    for layer in range(bandwidth):
        for j in range(layer % 2, n_modes - 1, 2):
            theta = strength * math.acos(math.sqrt(rng.uniform()))
            p1, p2 = strength * rng.uniform(0, 2 * math.pi, 2)
            c, s = math.cos(theta), math.sin(theta)
            g = np.array([[c * np.exp(1j * p1), -s * np.exp(1j * p2)],
                          [s * np.exp(-1j * p2), c * np.exp(-1j * p1)]])
            u[[j, j + 1], :] = g @ u[[j, j + 1], :]
    return u


def modal_taps(basis: ModeBasis, a: np.ndarray, plan: CouplingPlan | None = None):
    """Impulse response as delay taps.

    Returns ``(delays_ns, amps)`` with ``amps[k, m]`` the complex amplitude reaching
    output mode ``m`` through tap ``k``.
    """
    a = np.asarray(a, dtype=complex)
    n = basis.n_modes
    if a.size != n:
        raise FieldSimError(f"coupling vector has {a.size} entries, basis has {n} modes")
    length_um = basis.spec.length_mm * 1e3
    if plan is None or plan.segments == 1:
        return basis.group_delay_ns.copy(), np.diag(a * np.exp(-1j * basis.beta * length_um))
    s_count = plan.segments
    rng = np.random.default_rng(plan.rng_seed)
    mixers = [mixing_matrix(n, plan.coupling_strength, plan.bandwidth, rng) for _ in range(s_count - 1)]
    seg_delay = basis.group_delay_ns / s_count
    seg_phase = np.exp(-1j * basis.beta * length_um / s_count)
    delays = np.zeros(1)
    vecs = a[None, :]
    for s in range(s_count):
        k_idx, m_idx = np.nonzero(vecs)
        new_delays = delays[k_idx] + seg_delay[m_idx]
        weight = vecs[k_idx, m_idx] * seg_phase[m_idx]
        if s < s_count - 1:
            new_vecs = weight[:, None] * mixers[s][:, m_idx].T
        else:
            new_vecs = np.zeros((weight.size, n), dtype=complex)
            new_vecs[np.arange(weight.size), m_idx] = weight
        # merge taps whose delays coincide (path permutations)
        keys = np.round(new_delays * 1e9).astype(np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        merged = np.zeros((uniq.size, n), dtype=complex)
        np.add.at(merged, inv, new_vecs)
        first = np.zeros(uniq.size)
        first[inv[::-1]] = new_delays[::-1]
        delays, vecs = first, merged
    return delays, vecs


# -- simulation ---------------------------------------------------------------


def _modal_waveforms(delays: np.ndarray, amps: np.ndarray, mod: ModulationSignal,
                     step_index: np.ndarray) -> np.ndarray:
    c = np.zeros((amps.shape[1], step_index.size), dtype=complex)
    for d, vec in zip(delays, amps):
        p = np.exp(1j * mod.phase_at(step_index, d))
        nz = np.nonzero(vec)[0]
        c[nz] += vec[nz, None] * p[None, :]
    return c


def time_layout(basis_list: Sequence[ModeBasis], mod: ModulationSignal) -> tuple[np.ndarray, int, int]:
    """Simulation step indices, alignment (steps) and warm-up symbol count."""
    dt = mod.sim_timestep_ns
    t_min = max(float(b.group_delay_ns.min()) for b in basis_list)
    t_max = max(float(b.group_delay_ns.max()) for b in basis_list)
    alignment = int(math.ceil(t_min / dt - 1e-9))
    warmup = int(math.ceil(t_max / mod.symbol_period_ns)) + 1
    n_steps = mod.n_symbols * mod.steps_per_symbol + alignment
    return np.arange(n_steps, dtype=np.int64), alignment, warmup


def _profiles_at(basis: ModeBasis, points: np.ndarray) -> np.ndarray:
    # linear interpolation of the sampled profiles; exact on grid nodes
    return np.stack([np.interp(points, basis.grid, p) for p in basis.profiles])


def simulate_field(basis: ModeBasis, a: np.ndarray, mod: ModulationSignal,
                   plan: CouplingPlan | None = None, points: np.ndarray | None = None,
                   steps: np.ndarray | None = None) -> ComplexField:
    """Complex output field (carrier removed) at ``points`` (default: the mode grid)."""
    points = basis.grid if points is None else np.asarray(points, dtype=float)
    layout_steps, alignment, warmup = time_layout([basis], mod)
    steps = layout_steps if steps is None else np.asarray(steps, dtype=np.int64)
    delays, amps = modal_taps(basis, a, plan)
    c = _modal_waveforms(delays, amps, mod, steps)
    psi = basis.profiles if points is basis.grid else _profiles_at(basis, points)
    return ComplexField(values=psi.T @ c, positions_um=points, step_index=steps,
                        sim_timestep_ns=mod.sim_timestep_ns, alignment_steps=alignment,
                        warmup_symbols=warmup)


def spot_kernel(grid: np.ndarray, probes: np.ndarray, fwhm_um: float) -> np.ndarray:
    """Row-normalized weights mapping grid intensities to probe readings."""
    probes = np.asarray(probes, dtype=float)
    if probes.min() < grid[0] or probes.max() > grid[-1]:
        raise FieldSimError("probe positions fall outside the transverse grid")
    if fwhm_um == 0:
        k = np.zeros((probes.size, grid.size))
        for i, x in enumerate(probes):
            j = int(np.clip(np.searchsorted(grid, x) - 1, 0, grid.size - 2))
            f = (x - grid[j]) / (grid[j + 1] - grid[j])
            k[i, j], k[i, j + 1] = 1 - f, f
        return k
    sigma = fwhm_um / (2 * math.sqrt(2 * math.log(2)))
    k = np.exp(-0.5 * ((grid[None, :] - probes[:, None]) / sigma) ** 2)
    return k / k.sum(axis=1, keepdims=True)


def lowpass(signal: np.ndarray, bandwidth_ghz: float, dt_ns: float) -> np.ndarray:
    """First-order low-pass along the last axis, started at steady state."""
    tc = 1.0 / (2 * math.pi * bandwidth_ghz)
    r = math.exp(-dt_ns / tc)
    zi = (r * signal[..., :1])
    return lfilter([1 - r], [1, -r], signal, axis=-1, zi=zi)[0]


def detect(fld: ComplexField, det: DetectionSpec, rng: np.random.Generator | int | None = None,
           intensity: np.ndarray | None = None) -> np.ndarray:
    """Probe intensities (n_probes, n_times) from a field sampled on a uniform grid."""
    if intensity is None:
        intensity = np.abs(fld.values) ** 2
    kern = spot_kernel(fld.positions_um, np.asarray(det.probe_positions_um), det.spot_fwhm_um)
    out = kern @ intensity
    return _detector_chain(out, det, fld.sim_timestep_ns, rng)


def _detector_chain(out: np.ndarray, det: DetectionSpec, dt_ns: float, rng) -> np.ndarray:
    if det.detector_bandwidth_ghz is not None:
        out = lowpass(out, det.detector_bandwidth_ghz, dt_ns)
    if det.noise_std > 0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        out = out + det.noise_std * float(np.mean(out)) * gen.standard_normal(out.shape)
    if det.ac_coupled:
        out = out - out.mean(axis=-1, keepdims=True)
    return out


def _probe_intensity(basis: ModeBasis, a: np.ndarray, mod: ModulationSignal, det: DetectionSpec,
                     plan: CouplingPlan | None, steps: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Spot-averaged intensity without storing the full complex field."""
    probes = np.asarray(det.probe_positions_um, dtype=float)
    kern = spot_kernel(basis.grid, probes, det.spot_fwhm_um)
    used = np.nonzero(kern.max(axis=0) > 1e-16)[0]
    kern = kern[:, used]
    psi_t = basis.profiles[:, used].T
    delays, amps = modal_taps(basis, a, plan)
    out = np.empty((probes.size, steps.size))
    for lo in range(0, steps.size, chunk):
        sl = slice(lo, lo + chunk)
        e = psi_t @ _modal_waveforms(delays, amps, mod, steps[sl])
        out[:, sl] = kern @ (e.real**2 + e.imag**2)
    return out


def simulate_multiwavelength(spec: WaveguideSpec, input_field: InputField, mod: ModulationSignal,
                             det: DetectionSpec, wavelengths_nm: Sequence[float],
                             plan: CouplingPlan | None = None, seed: int = 0,
                             threads: int = 1, grid_resolution_um: float | None = None,
                             bases: Sequence[ModeBasis] | None = None) -> FieldRecord:
    """Simulate and detect at each wavelength; blocks are stacked along axis 0.

    ``bases`` may supply pre-solved mode sets (one per wavelength).
    """
    wavelengths_nm = tuple(float(w) for w in wavelengths_nm)
    if not wavelengths_nm:
        raise FieldSimError("need at least one wavelength")
    if bases is None:
        bases = []
        for lam in wavelengths_nm:
            b = solve_modes(spec.with_wavelength(lam), grid_resolution_um)
            if b.n_modes == 0:
                raise FieldSimError(f"no guided modes at {lam} nm")
            bases.append(b)
    steps, alignment, warmup = time_layout(bases, mod)
    noise_seeds = np.random.SeedSequence(seed).spawn(len(bases))

    def job(l: int) -> np.ndarray:
        b = bases[l]
        a = coupling_coefficients(b, input_field)
        raw = _probe_intensity(b, a, mod, det, plan, steps)
        return _detector_chain(raw, det, mod.sim_timestep_ns, np.random.default_rng(noise_seeds[l]))

    if threads > 1 and len(bases) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            blocks = list(ex.map(job, range(len(bases))))
    else:
        blocks = [job(l) for l in range(len(bases))]
    return FieldRecord(intensities=np.stack(blocks), step_index=steps,
                       sim_timestep_ns=mod.sim_timestep_ns, symbol_period_ns=mod.symbol_period_ns,
                       n_symbols=mod.n_symbols, probe_positions_um=np.asarray(det.probe_positions_um),
                       wavelengths_nm=wavelengths_nm, alignment_steps=alignment, warmup_symbols=warmup)


def record_from_field(fld: ComplexField, mod: ModulationSignal, det: DetectionSpec,
                      wavelength_nm: float, rng=None) -> FieldRecord:
    """Wrap a single simulate_field/detect result as a FieldRecord."""
    inten = detect(fld, det, rng)
    return FieldRecord(intensities=inten[None], step_index=fld.step_index,
                       sim_timestep_ns=fld.sim_timestep_ns, symbol_period_ns=mod.symbol_period_ns,
                       n_symbols=mod.n_symbols, probe_positions_um=np.asarray(det.probe_positions_um),
                       wavelengths_nm=(float(wavelength_nm),), alignment_steps=fld.alignment_steps,
                       warmup_symbols=fld.warmup_symbols)


def inter_wavelength_correlation(record: FieldRecord) -> float:
    """Mean |Pearson correlation| between I^l(x_i, t) and I^l'(x_i, t) over probes and pairs l < l'."""
    L = record.n_wavelengths
    if L < 2:
        raise FieldSimError("need at least two wavelengths")
    start = record.warmup_symbols * int(round(record.symbol_period_ns / record.sim_timestep_ns))
    z = record.intensities[:, :, start:]
    z = z - z.mean(axis=-1, keepdims=True)
    sd = np.sqrt((z**2).mean(axis=-1))
    vals = []
    for l in range(L):
        for lp in range(l + 1, L):
            ok = (sd[l] > 0) & (sd[lp] > 0)
            c = (z[l, ok] * z[lp, ok]).mean(axis=-1) / (sd[l, ok] * sd[lp, ok])
            vals.append(np.abs(c))
    return float(np.mean(np.concatenate(vals)))
