"""1D quartic-oscillator eigenproblem.

Solves  H0 = p^2/2 + x^4/4  with [p, x] = -i*hbar0 on a symmetric uniform
grid, split into even/odd parity sectors on a half grid.  The primary
discretization is a sinc-DVR kinetic matrix (spectrally accurate on the
grid's momentum window); a high-order central finite-difference stencil is
available as an independent second discretization.

Everything downstream (level frequencies, anharmonicity, coordinate matrix
elements) is derived from the solved spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, GridTooSmallError, IndexRangeError

# Nodes for the fixed Gauss-Legendre rule used by the WKB sizing estimate.
_GL_NODES = 64


def _gauss_legendre(a: float, b: float, n: int = _GL_NODES):
    x, w = np.polynomial.legendre.leggauss(n)
    xm, xh = 0.5 * (a + b), 0.5 * (b - a)
    return xm + xh * x, xh * w


def action_integral_constant() -> float:
    """S(E) = const * E^(3/4) for the quartic well; returns the constant.

    Computed as 8 * int_0^1 sqrt(1 - u^4) du with the endpoint singularity
    removed by u = sin(theta).
    """
    theta, w = _gauss_legendre(0.0, 0.5 * np.pi)
    s = np.sin(theta)
    integrand = np.cos(theta) ** 2 * np.sqrt(1.0 + s * s)
    return 8.0 * float(np.sum(w * integrand))


_S1 = action_integral_constant()


def wkb_energy(n: float, hbar0: float) -> float:
    """Semiclassical energy from the action rule S(E) = 2*pi*hbar0*(n + 1/2)."""
    return (2.0 * np.pi * hbar0 * (n + 0.5) / _S1) ** (4.0 / 3.0)


def turning_point(energy: float) -> float:
    """Classical turning point of x^4/4 at the given energy."""
    return (4.0 * energy) ** 0.25


@dataclass(frozen=True)
class OscillatorParams:
    """Grid and basis-size parameters for the quartic eigensolve.

    The grid spans [-grid_box_halfwidth, +grid_box_halfwidth] with
    grid_points points (forced even so the parity fold needs no center
    point).  Invariants: the box must exceed the classical turning point of
    level n_max by at least MIN_MARGIN, and the grid spacing must resolve
    the shortest local de Broglie wavelength of level n_max by at least
    MIN_POINTS_PER_WAVELENGTH points.
    """

    hbar0: float
    n_max: int
    grid_box_halfwidth: float
    grid_points: int

    MIN_MARGIN = 1.5
    MIN_POINTS_PER_WAVELENGTH = 8.0

    @classmethod
    def auto(
        cls,
        hbar0: float,
        n_max: int,
        margin_factor: float = 1.6,
        points_per_wavelength: float = 8.0,
    ) -> "OscillatorParams":
        """Size the box and grid from a WKB pre-estimate of E_{n_max}."""
        if hbar0 <= 0:
            raise GridTooSmallError(f"hbar0 must be > 0, got {hbar0}")
        if n_max < 1:
            raise GridTooSmallError(f"n_max must be >= 1, got {n_max}")
        if margin_factor < cls.MIN_MARGIN:
            raise GridTooSmallError(
                f"margin_factor {margin_factor} below minimum {cls.MIN_MARGIN}"
            )
        if points_per_wavelength < cls.MIN_POINTS_PER_WAVELENGTH:
            raise GridTooSmallError(
                f"points_per_wavelength {points_per_wavelength} below minimum "
                f"{cls.MIN_POINTS_PER_WAVELENGTH}"
            )
        e_top = 1.02 * wkb_energy(n_max, hbar0)
        box = margin_factor * turning_point(e_top)
        lam_min = 2.0 * np.pi * hbar0 / np.sqrt(2.0 * e_top)
        dx = lam_min / points_per_wavelength
        n_pts = int(np.ceil(2.0 * box / dx))
        n_pts += n_pts % 2
        return cls(hbar0=hbar0, n_max=n_max, grid_box_halfwidth=box, grid_points=n_pts)

    def validate(self) -> None:
        if self.hbar0 <= 0:
            raise GridTooSmallError(f"hbar0 must be > 0, got {self.hbar0}")
        if self.n_max < 1:
            raise GridTooSmallError(f"n_max must be >= 1, got {self.n_max}")
        if self.grid_points < 3:
            raise GridTooSmallError(f"grid_points must be >= 3, got {self.grid_points}")
        if self.grid_box_halfwidth <= 0:
            raise GridTooSmallError("grid_box_halfwidth must be > 0")
        e_top = wkb_energy(self.n_max, self.hbar0)
        xt = turning_point(e_top)
        if self.grid_box_halfwidth < self.MIN_MARGIN * xt:
            raise GridTooSmallError(
                f"box halfwidth {self.grid_box_halfwidth:.6g} is below "
                f"{self.MIN_MARGIN} x turning point {xt:.6g} of level {self.n_max}"
            )
        dx = 2.0 * self.grid_box_halfwidth / self.grid_points
        lam_min = 2.0 * np.pi * self.hbar0 / np.sqrt(2.0 * e_top)
        if dx > lam_min / self.MIN_POINTS_PER_WAVELENGTH:
            raise GridTooSmallError(
                f"grid spacing {dx:.6g} does not resolve the de Broglie "
                f"wavelength {lam_min:.6g} of level {self.n_max} by >= "
                f"{self.MIN_POINTS_PER_WAVELENGTH} points"
            )

    def refined(self) -> "OscillatorParams":
        """Same box, doubled point count."""
        return replace(self, grid_points=2 * self.grid_points)


@dataclass
class OscillatorSpectrum:
    """Solved quartic spectrum: energies, grid eigenfunctions, x matrix.

    energies[n] is E_n (strictly increasing), wavefunctions[n] the grid
    vector of psi_n normalized under trapezoid quadrature, x_elements the
    full symmetric coordinate matrix over the solved levels.
    """

    hbar0: float
    energies: np.ndarray
    x_elements: np.ndarray
    grid: np.ndarray
    params: OscillatorParams
    method: str
    convergence_defect: float
    wavefunctions: Optional[np.ndarray] = None

    @property
    def n_max(self) -> int:
        return len(self.energies) - 1

    def quadrature_weights(self) -> np.ndarray:
        dx = self.grid[1] - self.grid[0]
        w = np.full(self.grid.shape, dx)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


def _fd_second_derivative_weights(order: int) -> np.ndarray:
    """Central-difference weights for f'' at offsets -M..M, order = 2M."""
    if order < 2 or order % 2:
        raise ValueError(f"fd order must be a positive even integer, got {order}")
    m = order // 2
    offsets = np.arange(-m, m + 1, dtype=float)
    a = np.vander(offsets, N=2 * m + 1, increasing=True).T
    rhs = np.zeros(2 * m + 1)
    rhs[2] = 2.0  # f'' picks the j^2/2! row
    return np.linalg.solve(a, rhs)


def _kinetic_kernel(method: str, hbar0: float, dx: float, n_half: int, fd_order: int):
    """t(d): kinetic matrix element between grid points separated by d."""
    d = np.arange(2 * n_half, dtype=float)
    t = np.zeros(2 * n_half)
    if method == "dvr":
        t[0] = hbar0**2 * np.pi**2 / (6.0 * dx**2)
        dd = d[1:]
        t[1:] = hbar0**2 * ((-1.0) ** np.arange(1, 2 * n_half)) / (dx**2 * dd**2)
    elif method == "fd":
        w = _fd_second_derivative_weights(fd_order)
        m = fd_order // 2
        coeff = -(hbar0**2) / (2.0 * dx**2)
        upto = min(m, 2 * n_half - 1)
        t[: upto + 1] = coeff * w[m : m + upto + 1]
    else:
        raise ValueError(f"unknown discretization method {method!r}")
    return t


def _solve_sectors(
    params: OscillatorParams,
    method: str,
    fd_order: int,
    eigenvectors: bool,
    n_levels: int,
):
    """Diagonalize the even/odd parity sectors on the half grid.

    Returns (energies, full-grid wavefunction matrix or None, full grid).
    """
    n = params.grid_points
    half = n // 2
    dx = 2.0 * params.grid_box_halfwidth / n
    x_half = (np.arange(half) + 0.5) * dx
    t = _kinetic_kernel(method, params.hbar0, dx, half, fd_order)

    a_idx = np.arange(half)
    diff = np.abs(a_idx[:, None] - a_idx[None, :])
    summ = a_idx[:, None] + a_idx[None, :] + 1
    t_diff = t[diff]
    t_sum = t[summ]
    v = np.diag(x_half**4 / 4.0)

    n_even = (n_levels + 1 + 1) // 2  # levels 0, 2, 4, ...
    n_odd = n_levels + 1 - n_even  # levels 1, 3, 5, ...

    results = {}
    for parity, count in (("even", n_even), ("odd", n_odd)):
        if count == 0:
            results[parity] = (np.empty(0), None)
            continue
        h = t_diff + (t_sum if parity == "even" else -t_sum) + v
        if eigenvectors:
            vals, vecs = scipy.linalg.eigh(h, subset_by_index=[0, count - 1])
        else:
            vals = scipy.linalg.eigh(
                h, eigvals_only=True, subset_by_index=[0, count - 1]
            )
            vecs = None
        results[parity] = (vals, vecs)

    e_even, u_even = results["even"]
    e_odd, u_odd = results["odd"]
    energies = np.empty(n_levels + 1)
    energies[0::2] = e_even[:n_even]
    energies[1::2] = e_odd[:n_odd]
    if np.any(np.diff(energies) <= 0):
        raise ConvergenceError(
            "parity sectors do not interleave; grid badly under-resolved"
        )

    grid = (np.arange(n) - (n - 1) / 2.0) * dx
    if not eigenvectors:
        return energies, None, grid

    psi = np.empty((n_levels + 1, n))
    norm = 1.0 / np.sqrt(2.0 * dx)
    for k in range(n_even):
        u = u_even[:, k]
        psi[2 * k, half:] = u * norm
        psi[2 * k, :half] = u[::-1] * norm
    for k in range(n_odd):
        u = u_odd[:, k]
        psi[2 * k + 1, half:] = u * norm
        psi[2 * k + 1, :half] = -u[::-1] * norm
    # deterministic sign gauge: largest-magnitude sample positive
    for row in psi:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1.0
    return energies, psi, grid


def solve_spectrum(
    params: OscillatorParams,
    method: str = "dvr",
    fd_order: int = 10,
    refine_cap: int = 2,
    convergence_rtol: float = 1e-8,
    keep_wavefunctions: bool = True,
) -> OscillatorSpectrum:
    """Solve the quartic eigenproblem for levels 0..n_max.

    Convergence contract: doubling the grid changes E_{n_max} by less than
    convergence_rtol relative.  The grid is refined (points doubled, box
    kept) up to refine_cap times before ConvergenceError is raised.
    """
    params.validate()
    current = params
    for _ in range(refine_cap + 1):
        energies, psi, grid = _solve_sectors(
            current, method, fd_order, eigenvectors=True, n_levels=current.n_max
        )
        e_check, _, _ = _solve_sectors(
            current.refined(), method, fd_order, eigenvectors=False,
            n_levels=current.n_max,
        )
        defect = abs(energies[-1] - e_check[-1]) / abs(e_check[-1])
        if defect < convergence_rtol:
            break
        current = current.refined()
    else:
        raise ConvergenceError(
            f"E_{params.n_max} not converged to {convergence_rtol} after "
            f"{refine_cap} refinements (last defect {defect:.3e})"
        )

    if np.any(energies <= 0) or np.any(np.diff(energies) <= 0):
        raise ConvergenceError("spectrum not strictly increasing and positive")

    dx = grid[1] - grid[0]
    w = np.full(grid.shape, dx)
    w[0] *= 0.5
    w[-1] *= 0.5
    x_elements = (psi * (w * grid)) @ psi.T
    x_elements = 0.5 * (x_elements + x_elements.T)

    return OscillatorSpectrum(
        hbar0=current.hbar0,
        energies=energies,
        x_elements=x_elements,
        grid=grid,
        params=current,
        method=method,
        convergence_defect=defect,
        wavefunctions=psi if keep_wavefunctions else None,
    )


def level_frequency(spec: OscillatorSpectrum, n: int) -> float:
    """omega_n = (E_{n+1} - E_{n-1}) / (2*hbar0), the central-difference E'_n."""
    if not 1 <= n <= spec.n_max - 1:
        raise IndexRangeError(f"n must be in [1, {spec.n_max - 1}], got {n}")
    return (spec.energies[n + 1] - spec.energies[n - 1]) / (2.0 * spec.hbar0)


def anharmonicity(spec: OscillatorSpectrum, n: int) -> float:
    """E''_n = E_{n+1} - 2 E_n + E_{n-1} (positive for the hardening well)."""
    if not 1 <= n <= spec.n_max - 1:
        raise IndexRangeError(f"n must be in [1, {spec.n_max - 1}], got {n}")
    e = spec.energies
    return float(e[n + 1] - 2.0 * e[n] + e[n - 1])


def small_nonlinearity_ratio(spec: OscillatorSpectrum, n0: int, k: int, p: int = 1) -> float:
    """hbar0*omega*p over the quadratic correction E''*(k^2 - p*k + p^2/2)."""
    quad = anharmonicity(spec, n0) * (k * k - p * k + p * p / 2.0)
    if quad == 0.0:
        return np.inf
    return spec.hbar0 * level_frequency(spec, n0) * p / quad


@dataclass
class BandedXMatrix:
    """Odd-offset band of the coordinate matrix.

    bands[d] holds x_{n, n+d} for the stored odd offsets d; entry j of
    bands[d] is x_{j, j+d}.  max_dropped_relative reports the largest
    dropped |x_{n,n'}| beyond the cutoff relative to the local x_{n,n+1}.
    """

    offsets: tuple
    bands: dict
    max_dropped_relative: float

    def element(self, n: int, m: int) -> float:
        d = abs(n - m)
        if d not in self.bands:
            return 0.0
        j = min(n, m)
        return float(self.bands[d][j])


def position_matrix_elements(
    spec: OscillatorSpectrum, offset_cutoff: int, drop_tol: float = 1e-5
) -> BandedXMatrix:
    """Banded view of x_{n,n'}: odd offsets |n - n'| <= offset_cutoff.

    Offsets beyond the cutoff are dropped; the largest dropped element
    relative to the local x_{n,n+1} magnitude is recorded so a too-small
    cutoff is visible (a warning-level quantity, compared to drop_tol by
    callers that care).
    """
    if offset_cutoff < 1 or offset_cutoff % 2 == 0:
        raise IndexRangeError(f"offset_cutoff must be odd and >= 1, got {offset_cutoff}")
    if offset_cutoff > spec.n_max:
        raise IndexRangeError(
            f"offset_cutoff {offset_cutoff} exceeds available basis {spec.n_max}"
        )
    x = spec.x_elements
    offsets = tuple(range(1, offset_cutoff + 1, 2))
    bands = {d: np.diagonal(x, offset=d).copy() for d in offsets}

    main = np.abs(bands[1])
    dropped = 0.0
    for d in range(offset_cutoff + 2, spec.n_max + 1, 2):
        diag = np.abs(np.diagonal(x, offset=d))
        if diag.size == 0:
            break
        ref = main[: diag.size]
        dropped = max(dropped, float(np.max(diag / np.maximum(ref, 1e-300))))
    _ = drop_tol  # recorded for callers; no hard failure here
    return BandedXMatrix(offsets=offsets, bands=bands, max_dropped_relative=dropped)
