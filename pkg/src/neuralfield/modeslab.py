"""Guided TE modes of a symmetric step-index slab waveguide.

Units used throughout the package: transverse positions in micrometres,
waveguide length in millimetres, free-space wavelength in nanometres,
propagation constants in rad/um and time in nanoseconds.

Two solvers are available. ``"exact"`` bisects the transcendental TE
dispersion relation branch by branch. ``"hardwall"`` uses the perfectly
confined sinusoid approximation, which has closed-form propagation
constants and group delays and serves as a cross-check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

C_UM_PER_NS = 299792458.0 * 1e-3  # um / ns

Solver = Literal["exact", "hardwall"]


class ModeSolverError(ValueError):
    """Invalid waveguide parameters or a failed mode solve."""


@dataclass(frozen=True)
class WaveguideSpec:
    width_um: float = 25.0
    length_mm: float = 39.0
    n_core: float = 2.556
    n_clad: float = 1.444
    wavelength_nm: float = 1550.0

    def __post_init__(self):
        if not (self.width_um > 0 and self.length_mm > 0 and self.wavelength_nm > 0):
            raise ModeSolverError("width_um, length_mm and wavelength_nm must be positive")
        if self.n_clad < 1.0:
            raise ModeSolverError(f"n_clad must be >= 1, got {self.n_clad}")
        if self.n_core <= self.n_clad:
            raise ModeSolverError(
                f"n_core ({self.n_core}) must exceed n_clad ({self.n_clad}); no guidance"
            )

    @property
    def wavelength_um(self) -> float:
        return self.wavelength_nm * 1e-3

    @property
    def k0(self) -> float:
        return 2 * math.pi / self.wavelength_um

    @property
    def omega0(self) -> float:
        """Angular frequency in rad/ns."""
        return 2 * math.pi * C_UM_PER_NS / self.wavelength_um

    @property
    def numerical_aperture(self) -> float:
        return math.sqrt(self.n_core**2 - self.n_clad**2)

    @property
    def v_number(self) -> float:
        """Normalized frequency (pi W / lambda) * NA, i.e. k0 * (W/2) * NA."""
        return math.pi * self.width_um / self.wavelength_um * self.numerical_aperture

    def with_wavelength(self, wavelength_nm: float) -> "WaveguideSpec":
        return WaveguideSpec(self.width_um, self.length_mm, self.n_core, self.n_clad, wavelength_nm)


@dataclass(frozen=True)
class InputField:
    """Transverse profile of the light launched into the multimode section.

    For a Gaussian the field is ``exp(-((x - center_offset) / (spot_width / 2))**2)``,
    so ``spot_width`` is the 1/e^2 intensity diameter. A loaded profile is given
    as ``sample_positions`` / ``sample_values`` and is linearly interpolated onto
    the mode grid (zero outside the sampled range).
    """

    spot_width_um: float = 0.5
    center_offset_um: float = 2.0
    shape: Literal["gaussian", "samples"] = "gaussian"
    sample_positions: tuple[float, ...] | None = None
    sample_values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.shape == "gaussian" and self.spot_width_um <= 0:
            raise ModeSolverError("spot_width_um must be positive")
        if self.shape == "samples":
            if self.sample_positions is None or self.sample_values is None:
                raise ModeSolverError("sampled input needs sample_positions and sample_values")
            if len(self.sample_positions) != len(self.sample_values):
                raise ModeSolverError("sample_positions and sample_values differ in length")

    def sample(self, grid: np.ndarray) -> np.ndarray:
        """Profile on ``grid``, normalized to unit power on that grid."""
        if self.shape == "gaussian":
            w = self.spot_width_um / 2
            e0 = np.exp(-(((grid - self.center_offset_um) / w) ** 2))
        else:
            e0 = np.interp(grid, self.sample_positions, self.sample_values, left=0.0, right=0.0)
        dx = grid[1] - grid[0]
        power = np.sum(np.abs(e0) ** 2) * dx
        if power <= 0:
            raise ModeSolverError("input field has zero power on the mode grid")
        return e0 / math.sqrt(power)


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Solved guided-mode set. Row ``m`` of ``profiles`` is mode ``m`` on ``grid``."""

    spec: WaveguideSpec
    beta: np.ndarray  # rad/um, strictly decreasing
    group_delay_ns: np.ndarray
    profiles: np.ndarray  # (M, n_grid), orthonormal under dx * sum
    grid: np.ndarray  # um
    solver: str = "exact"
    transverse_u: np.ndarray = field(default=None, repr=False)  # kappa * W/2 per mode

    @property
    def n_modes(self) -> int:
        return int(self.beta.size)

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def omega0(self) -> float:
        """Carrier angular frequency in rad/s."""
        return self.spec.omega0 * 1e9

    @property
    def delay_spread_ns(self) -> float:
        return float(self.group_delay_ns.max() - self.group_delay_ns.min())

    @property
    def round_trip_ns(self) -> float:
        """2L / v_g of the fundamental mode."""
        return float(2 * self.group_delay_ns[0])

    def gram(self) -> np.ndarray:
        return self.profiles @ self.profiles.T * self.dx

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "beta", "group_delay_ns"] + [f"x={x:.6g}" for x in self.grid])
            for m in range(self.n_modes):
                w.writerow(
                    [m, repr(float(self.beta[m])), repr(float(self.group_delay_ns[m]))]
                    + [repr(float(v)) for v in self.profiles[m]]
                )


# -- dispersion relation ------------------------------------------------------


def _branch_residual(u: float, v_num: float, m: int) -> float:
    # Phase form of the TE condition: u = m*pi/2 + arctan(w/u), w = sqrt(V^2 - u^2).
    w = math.sqrt(max(v_num * v_num - u * u, 0.0))
    return u - m * math.pi / 2 - math.atan2(w, u)


def characteristic(u: np.ndarray, v_num: float, parity: int) -> np.ndarray:
    """Pole-free TE characteristic functions (zeros are the guided modes).

    parity 0 (even modes): u sin u - w cos u; parity 1 (odd modes): u cos u + w sin u.
    """
    u = np.asarray(u, dtype=float)
    w = np.sqrt(np.maximum(v_num**2 - u**2, 0.0))
    if parity == 0:
        return u * np.sin(u) - w * np.cos(u)
    return u * np.cos(u) + w * np.sin(u)


def count_modes_scan(spec: WaveguideSpec, n_points: int = 1_000_000) -> int:
    """Mode count from sign changes of the characteristic functions on a dense grid."""
    v_num = spec.v_number
    u = np.linspace(0.0, v_num, n_points + 1)[1:]
    total = 0
    for parity in (0, 1):
        f = characteristic(u, v_num, parity)
        total += int(np.count_nonzero(np.signbit(f[1:]) != np.signbit(f[:-1])))
    return total


def count_guided_modes(spec: WaveguideSpec) -> int:
    """Number of bound TE modes; branch m exists when m*pi/2 < V."""
    return int(math.ceil(2 * spec.v_number / math.pi))


def _bisect_branch(v_num: float, m: int, tol: float = 1e-12, max_iter: int = 200) -> float:
    lo = m * math.pi / 2
    hi = min((m + 1) * math.pi / 2, v_num)
    if not (_branch_residual(lo, v_num, m) <= 0 <= _branch_residual(hi, v_num, m)):
        raise ModeSolverError(f"no root bracketed for branch {m}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _branch_residual(mid, v_num, m) < 0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    if abs(_branch_residual(root, v_num, m)) >= tol:
        raise ModeSolverError(f"bisection did not converge for branch {m}")
    return root


def _transverse_roots(spec: WaveguideSpec, solver: Solver) -> np.ndarray:
    """Normalized transverse wavenumbers u_m = kappa_m * W/2."""
    v_num = spec.v_number
    if solver == "hardwall":
        n = count_guided_modes(spec)
        u = (np.arange(n) + 1) * math.pi / 2
        return u[u < v_num]
    if solver != "exact":
        raise ModeSolverError(f"unknown solver {solver!r}")
    return np.array([_bisect_branch(v_num, m) for m in range(count_guided_modes(spec))])


def propagation_constants(spec: WaveguideSpec, solver: Solver = "exact") -> np.ndarray:
    u = _transverse_roots(spec, solver)
    kappa = u / (spec.width_um / 2)
    return np.sqrt((spec.n_core * spec.k0) ** 2 - kappa**2)


def group_delays(spec: WaveguideSpec, solver: Solver = "exact", rel_step: float = 1e-5) -> np.ndarray:
    """t_g = L * d(beta)/d(omega) by centered finite difference in omega (ns)."""
    lam = spec.wavelength_nm
    n = _transverse_roots(spec, solver).size
    # omega scales as 1/lambda
    b_plus = propagation_constants(spec.with_wavelength(lam / (1 + rel_step)), solver)
    b_minus = propagation_constants(spec.with_wavelength(lam / (1 - rel_step)), solver)
    if b_minus.size < n:
        raise ModeSolverError(f"branch {n - 1} is cut off within the finite-difference step")
    d_omega = 2 * rel_step * spec.omega0
    return (b_plus[:n] - b_minus[:n]) / d_omega * spec.length_mm * 1e3


def hardwall_group_delays(spec: WaveguideSpec) -> np.ndarray:
    """Analytic hard-wall delays L * n_core^2 * omega / (c^2 beta)."""
    beta = propagation_constants(spec, "hardwall")
    return spec.length_mm * 1e3 * spec.n_core**2 * spec.omega0 / (C_UM_PER_NS**2 * beta)


def _profiles(spec: WaveguideSpec, u: np.ndarray, grid: np.ndarray, solver: Solver) -> np.ndarray:
    d = spec.width_um / 2
    v_num = spec.v_number
    kappa = u / d
    out = np.zeros((u.size, grid.size))
    inside = np.abs(grid) <= d
    xs = np.abs(grid[~inside]) - d
    sgn = np.sign(grid[~inside])
    for m, (um, km) in enumerate(zip(u, kappa)):
        if m % 2 == 0:
            out[m, inside] = np.cos(km * grid[inside])
            edge, tail_sign = math.cos(um), 1.0
        else:
            out[m, inside] = np.sin(km * grid[inside])
            edge, tail_sign = math.sin(um), sgn
        if solver == "exact":
            gamma = math.sqrt(max(v_num**2 - um**2, 0.0)) / d
            out[m, ~inside] = tail_sign * edge * np.exp(-gamma * xs)
        # hard wall: zero outside the core
    return out


def _orthonormalize(profiles: np.ndarray, dx: float) -> np.ndarray:
    # Symmetric (Loewdin) orthonormalization: the least perturbation of the sampled modes.
    s = profiles @ profiles.T * dx
    evals, evecs = np.linalg.eigh(s)
    if evals.min() <= 1e-10 * evals.max():
        raise ModeSolverError("mode profiles are linearly dependent on the grid; refine grid")
    s_inv_half = (evecs / np.sqrt(evals)) @ evecs.T
    return s_inv_half @ profiles


def make_grid(spec: WaveguideSpec, u: np.ndarray, resolution_um: float, decay_lengths: float = 3.0,
              max_points: int = 200_000) -> np.ndarray:
    d = spec.width_um / 2
    w = np.sqrt(np.maximum(spec.v_number**2 - u**2, 0.0))
    gamma_min = float(w.min()) / d if w.size else 0.0
    if gamma_min <= 0:
        raise ModeSolverError("a mode sits at cutoff; cladding decay length is unbounded")
    half = d + decay_lengths / gamma_min
    n = int(math.ceil(2 * half / resolution_um)) + 1
    if n < 8 or n > max_points:
        raise ModeSolverError(f"degenerate transverse grid ({n} points)")
    return np.linspace(-half, half, n)


def solve_modes(spec: WaveguideSpec, grid_resolution_um: float | None = None,
                solver: Solver = "exact", grid: np.ndarray | None = None) -> ModeBasis:
    """Solve the slab and sample orthonormal mode profiles.

    The default grid spacing is lambda/16; any requested spacing must not exceed
    lambda/8. ``grid`` overrides the automatically sized grid (it must be uniform).
    """
    lam_um = spec.wavelength_um
    if grid_resolution_um is None:
        grid_resolution_um = lam_um / 16
    if grid_resolution_um > lam_um / 8 * (1 + 1e-12):
        raise ModeSolverError(
            f"grid_resolution {grid_resolution_um} um exceeds lambda/8 = {lam_um / 8:.4g} um"
        )
    u = _transverse_roots(spec, solver)
    if u.size == 0:
        raise ModeSolverError("waveguide supports no guided modes at this wavelength")
    kappa = u / (spec.width_um / 2)
    beta = np.sqrt((spec.n_core * spec.k0) ** 2 - kappa**2)
    if grid is None:
        grid = make_grid(spec, u, grid_resolution_um)
    else:
        grid = np.asarray(grid, dtype=float)
        if grid.size < 8 or not np.allclose(np.diff(grid), grid[1] - grid[0], rtol=1e-9, atol=0):
            raise ModeSolverError("grid must be uniform with at least 8 points")
    dx = grid[1] - grid[0]
    prof = _orthonormalize(_profiles(spec, u, grid, solver), dx)
    tg = group_delays(spec, solver)[: u.size]
    return ModeBasis(spec=spec, beta=beta, group_delay_ns=tg, profiles=prof, grid=grid,
                     solver=solver, transverse_u=u)


def coupling_coefficients(basis: ModeBasis, input_field: InputField) -> np.ndarray:
    """Overlap integrals a_m = int Psi_m E0 dx, renormalized to unit total power."""
    e0 = input_field.sample(basis.grid)
    a = (basis.profiles @ e0) * basis.dx
    total = float(np.sum(np.abs(a) ** 2))
    if total <= 1e-30:
        raise ModeSolverError("input field has no overlap with the guided modes")
    return (a / math.sqrt(total)).astype(complex)


def raw_overlaps(basis: ModeBasis, e0: Sequence[float] | np.ndarray) -> np.ndarray:
    """Overlaps without renormalization (for Parseval checks)."""
    return (basis.profiles @ np.asarray(e0)) * basis.dx
