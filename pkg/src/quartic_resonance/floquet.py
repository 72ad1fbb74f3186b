"""One-period evolution operator under the two-frequency drive.

The drive couples adjacent groups only (the x operator changes n by one at
fixed m); in the slow-amplitude frame the equations of motion are

    i*hbar0 db_{q,s}/dt = -f0 cos(dOmega t / 2) * sum_{s'} [
        x_{q,s;q+1,s'} b_{q+1,s'} exp(-i (E^M_{q+1,s'} - E^M_{q,s}) t / hbar0)
      + x_{q,s;q-1,s'} b_{q-1,s'} exp(-i (E^M_{q-1,s'} - E^M_{q,s}) t / hbar0) ]

integrated with fixed-step RK4; every oscillatory factor is evaluated
analytically at the stage times, so the only discretization error is the
polynomial sampling of the slow coupling.  Columns of the one-period
operator are the evolutions of basis initial conditions; the operator is
diagonalized into quasienergies and QE states via a Schur decomposition
(exactly diagonal for a unitary matrix, and the Schur vectors stay
orthonormal for quasi-degenerate quasienergies).

A brute-force integrator of the unreduced equations (full cos drives,
counter-rotating terms, all odd group-distance couplings) is provided as
the oracle for the resonance approximation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import IndexRangeError, UnitarityError, ValidationError
from .oscillator import OscillatorSpectrum
from .resonance import ResonanceBasis


@dataclass(frozen=True)
class DriveParams:
    """Two commensurate drive tones centered on the resonance frequency.

    cycles1 tones of omega1 and cycles2 of omega2 fit exactly in the
    common period T (omega1/omega2 = cycles1/cycles2, coprime).  The tones
    sit at omega_target +- delta_omega/2 with omega_target the rational
    center, placed on the resonance-center frequency by construction.
    """

    f0: float
    omega1: float
    omega2: float
    cycles1: int
    cycles2: int
    detuning_bound: float = 1e-6
    f0_over_mu: Optional[float] = None

    @property
    def period(self) -> float:
        return 2.0 * np.pi * self.cycles1 / self.omega1

    @property
    def delta_omega(self) -> float:
        return self.omega1 - self.omega2

    @property
    def omega_target(self) -> float:
        return 0.5 * (self.omega1 + self.omega2)

    def validate(self):
        if self.f0 < 0:
            raise ValidationError("f0 must be >= 0")
        if self.omega1 <= self.omega2 or self.omega2 <= 0:
            raise ValidationError("need omega1 > omega2 > 0")
        from math import gcd

        if gcd(self.cycles1, self.cycles2) != 1:
            raise ValidationError("cycle counts must be coprime")
        if abs(self.omega1 * self.cycles2 - self.omega2 * self.cycles1) > 1e-12 * self.omega1:
            raise ValidationError(
                "omega1/omega2 does not equal cycles1/cycles2 exactly"
            )


def make_drive(
    omega: float,
    f0: float,
    delta_ratio: float = 0.2222,
    max_cycles: int = 64,
    f0_over_mu: Optional[float] = None,
) -> DriveParams:
    """Rationalize the tone ratio and center the pair exactly on omega.

    delta_ratio is the targeted (omega1 - omega2)/omega; the realized value
    is the nearest ratio of small integers (<= max_cycles cycles per
    period), keeping (omega1 + omega2)/2 = omega exactly.
    """
    if not 0 < delta_ratio < 1:
        raise ValidationError(f"delta_ratio must be in (0, 1), got {delta_ratio}")
    frac = Fraction((2.0 + delta_ratio) / (2.0 - delta_ratio)).limit_denominator(
        max_cycles
    )
    c1, c2 = frac.numerator, frac.denominator
    if c1 == c2:
        raise ValidationError(
            f"delta_ratio {delta_ratio} rationalizes to equal tones; "
            "increase max_cycles"
        )
    omega1 = 2.0 * omega * c1 / (c1 + c2)
    omega2 = 2.0 * omega * c2 / (c1 + c2)
    return DriveParams(
        f0=f0, omega1=omega1, omega2=omega2, cycles1=c1, cycles2=c2,
        f0_over_mu=f0_over_mu,
    )


# ---------------------------------------------------------------------------
# Slow-amplitude integrator
# ---------------------------------------------------------------------------


class _SlowSystem:
    """Precomputed arrays for the slow-amplitude right-hand side."""

    def __init__(self, basis: ResonanceBasis, drive: DriveParams):
        drive.validate()
        self.hbar0 = basis.hbar0
        self.f0 = drive.f0
        self.half_delta = 0.5 * drive.delta_omega
        self.n_groups = basis.n_groups
        self.size = basis.group_size
        qs = basis.q_values()
        if np.any(np.diff(qs) != 1):
            raise ValidationError("drive-ready basis needs contiguous groups")
        self.qs = qs
        detuning = basis.omega - drive.omega_target
        if abs(detuning) > drive.detuning_bound * basis.omega:
            raise ValidationError(
                f"drive center off resonance by {detuning:.3e} "
                f"(bound {drive.detuning_bound:.1e} relative)"
            )
        if drive.f0_over_mu is not None and basis.params.mu > 0:
            ratio = drive.f0 / basis.params.mu
            if abs(ratio - drive.f0_over_mu) > 1e-9 * max(drive.f0_over_mu, 1e-300):
                raise ValidationError(
                    f"f0/mu = {ratio:.6g} differs from configured "
                    f"{drive.f0_over_mu:.6g}"
                )
        # residual detuning folded into the analytic phase energies
        self.em_tilde = basis.em_matrix() + (
            self.hbar0 * detuning * qs[:, None]
        )
        self.energies = basis.em_matrix() + (
            self.hbar0 * basis.omega * qs[:, None]
        )
        self.blocks = np.ascontiguousarray(
            np.stack(basis.transitions.blocks).astype(np.complex128)
        )
        self.blocks_t = np.ascontiguousarray(self.blocks.transpose(0, 2, 1))
        self.omega_ref = drive.omega_target

    def rhs(self, t: float, b: np.ndarray, out: np.ndarray) -> np.ndarray:
        ph = np.exp((1j * t / self.hbar0) * self.em_tilde)[:, :, None]
        bp = np.conj(ph) * b
        out[:] = 0.0
        out[:-1] += np.matmul(self.blocks, bp[1:])
        out[1:] += np.matmul(self.blocks_t, bp[:-1])
        out *= ph
        out *= 1j * self.f0 * np.cos(self.half_delta * t) / self.hbar0
        return out

    def phase_map(self, t: float) -> np.ndarray:
        """diag of C = b * exp(-i (q omega + E^M/hbar0) t), shape (G, S)."""
        exponent = self.omega_ref * self.qs[:, None] + self.em_tilde / self.hbar0
        return np.exp(-1j * exponent * t)


def integrate_window(
    basis: ResonanceBasis,
    drive: DriveParams,
    t0: float,
    t1: float,
    b0: np.ndarray,
    n_steps: int,
) -> np.ndarray:
    """Fixed-step RK4 on the slow-amplitude system from t0 to t1.

    b0 has shape (dim, n_cols); the returned array is b(t1) in the same
    layout.  Negative windows (t1 < t0) integrate backward.
    """
    sys = _SlowSystem(basis, drive)
    g, s = sys.n_groups, sys.size
    b = np.ascontiguousarray(b0, dtype=np.complex128).reshape(g, s, -1).copy()
    h = (t1 - t0) / n_steps
    k1 = np.empty_like(b)
    k2 = np.empty_like(b)
    k3 = np.empty_like(b)
    k4 = np.empty_like(b)
    tmp = np.empty_like(b)
    for n in range(n_steps):
        t = t0 + n * h
        sys.rhs(t, b, k1)
        np.multiply(k1, 0.5 * h, out=tmp)
        tmp += b
        sys.rhs(t + 0.5 * h, tmp, k2)
        np.multiply(k2, 0.5 * h, out=tmp)
        tmp += b
        sys.rhs(t + 0.5 * h, tmp, k3)
        np.multiply(k3, h, out=tmp)
        tmp += b
        sys.rhs(t + h, tmp, k4)
        k2 += k3
        k2 *= 2.0
        k1 += k4
        k1 += k2
        k1 *= h / 6.0
        b += k1
    return b.reshape(g * s, -1)


def default_steps_per_period(
    basis: ResonanceBasis, drive: DriveParams, phase_per_step: float = 0.25
) -> int:
    """Steps so the fastest analytic phase advances <= phase_per_step per step."""
    em = basis.em_matrix()
    rate = (em.max() - em.min()) / basis.hbar0 + 0.5 * abs(drive.delta_omega)
    return max(512, int(np.ceil(drive.period * rate / phase_per_step)))


def integrate_column(
    basis: ResonanceBasis,
    drive: DriveParams,
    q0: int,
    s0: int,
    n_steps: Optional[int] = None,
    norm_tol: float = 1e-9,
    leak_threshold: float = 1e-6,
) -> np.ndarray:
    """One-period evolution C(T) of the basis state (q0, s0).

    Returns the column in the C representation; the norm drift is checked
    against norm_tol and probability reaching the edge groups against
    leak_threshold (flagged with a warning, not fatal).
    """
    qs = list(basis.q_values())
    if q0 not in qs:
        raise IndexRangeError(f"q0 = {q0} not in basis groups {qs[0]}..{qs[-1]}")
    if not 0 <= s0 < basis.group_size:
        raise IndexRangeError(f"s0 = {s0} outside group of {basis.group_size}")
    if n_steps is None:
        n_steps = default_steps_per_period(basis, drive)
    dim = basis.dim
    b0 = np.zeros((dim, 1), dtype=np.complex128)
    b0[qs.index(q0) * basis.group_size + s0, 0] = 1.0
    sys = _SlowSystem(basis, drive)
    b = integrate_window(basis, drive, 0.0, drive.period, b0, n_steps)
    col = (sys.phase_map(drive.period).reshape(-1, 1) * b)[:, 0]
    drift = abs(np.linalg.norm(col) - 1.0)
    if drift > norm_tol:
        raise UnitarityError(
            f"column norm drift {drift:.3e} exceeds {norm_tol:.1e}; "
            "refine n_steps"
        )
    g = basis.n_groups
    edge = np.abs(col.reshape(g, -1)[[0, g - 1]]) ** 2
    if q0 not in (qs[0], qs[-1]) and edge.sum() > leak_threshold:
        warnings.warn(
            f"edge-group probability {edge.sum():.3e} above {leak_threshold:.1e};"
            " consider a larger q_halfwidth", stacklevel=2,
        )
    return col


@dataclass
class FloquetOperator:
    """Assembled one-period operator and its spectral data."""

    basis: ResonanceBasis
    drive: DriveParams
    matrix: np.ndarray
    quasienergies: np.ndarray
    eigenvectors: np.ndarray
    eigenvalue_moduli: np.ndarray
    unitarity_defect: float
    edge_leak: float
    n_steps: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def quasienergy_zone(self) -> float:
        return 2.0 * np.pi * self.basis.hbar0 / self.drive.period


def fold_quasienergy(eps, zone_width: float):
    """Fold into the principal zone (-zone/2, zone/2]; boundary ties go up."""
    eps = np.asarray(eps, dtype=float)
    folded = eps - zone_width * np.floor(eps / zone_width + 0.5)
    tie = np.isclose(folded, -0.5 * zone_width, rtol=0.0, atol=1e-15 * zone_width)
    folded = np.where(tie, 0.5 * zone_width, folded)
    return folded if folded.shape else float(folded)


def assemble_operator(
    basis: ResonanceBasis,
    drive: DriveParams,
    n_steps: Optional[int] = None,
    phase_per_step: float = 0.25,
    unitarity_abort: float = 1e-6,
    leak_threshold: float = 1e-6,
) -> FloquetOperator:
    """Integrate every basis column over one period and diagonalize.

    Aborts with UnitarityError when the assembled matrix misses unitarity
    by more than unitarity_abort (integrator misconfiguration).  The
    quasienergies are -(hbar0/T) arg(lambda_Q) folded into the principal
    zone; eigenvectors come from the complex Schur form (orthonormal even
    through quasienergy quasi-degeneracies).
    """
    if n_steps is None:
        n_steps = default_steps_per_period(basis, drive, phase_per_step)
    dim = basis.dim
    sys = _SlowSystem(basis, drive)
    b = integrate_window(
        basis, drive, 0.0, drive.period, np.eye(dim, dtype=np.complex128), n_steps
    )
    u = sys.phase_map(drive.period).reshape(-1, 1) * b

    gram = u.conj().T @ u
    defect = float(np.max(np.abs(gram - np.eye(dim))))
    if defect > unitarity_abort:
        raise UnitarityError(
            f"unitarity defect {defect:.3e} above abort threshold "
            f"{unitarity_abort:.1e} at {n_steps} steps/period"
        )

    g, s = basis.n_groups, basis.group_size
    center = (g // 2) * s
    edge_rows = np.r_[0:s, (g - 1) * s : g * s]
    leak = float(
        np.max(np.sum(np.abs(u[edge_rows, center : center + s]) ** 2, axis=0))
    )
    if leak > leak_threshold:
        warnings.warn(
            f"one-period edge-group leak {leak:.3e} above {leak_threshold:.1e};"
            " consider a larger q_halfwidth", stacklevel=2,
        )

    t_schur, z = scipy.linalg.schur(u, output="complex")
    lam = np.diagonal(t_schur)
    moduli = np.abs(lam)
    hbar0, period = basis.hbar0, drive.period
    eps = fold_quasienergy(
        -(hbar0 / period) * np.angle(lam), 2.0 * np.pi * hbar0 / period
    )
    return FloquetOperator(
        basis=basis,
        drive=drive,
        matrix=u,
        quasienergies=np.asarray(eps),
        eigenvectors=z,
        eigenvalue_moduli=moduli,
        unitarity_defect=defect,
        edge_leak=leak,
        n_steps=n_steps,
    )


def delocalization_measures(op: FloquetOperator):
    """Per-QE-state center and spread over the group index.

    Returns (q_bar, sigma_q) arrays: q_bar = sum_q q P_q and
    sigma_q = sum_q (q - q_bar)^2 P_q with P_q = sum_s |A^Q_{q,s}|^2.
    """
    g, s = op.basis.n_groups, op.basis.group_size
    qs = op.basis.q_values().astype(float)
    p = np.abs(op.eigenvectors) ** 2
    p_q = p.reshape(g, s, -1).sum(axis=1)
    qbar = qs @ p_q
    sigma = ((qs[:, None] - qbar[None, :]) ** 2 * p_q).sum(axis=0)
    return qbar, sigma


# ---------------------------------------------------------------------------
# Unreduced reference (oracle for the resonance approximation)
# ---------------------------------------------------------------------------


def _drive_blocks_full(spec: OscillatorSpectrum, basis: ResonanceBasis):
    """All odd group-distance drive blocks within the window."""
    params = basis.params
    n0, kw = params.n0, params.k_halfwidth
    out = {}
    for d in range(1, 2 * kw + 1, 2):
        pairs = []
        k = np.arange(-kw, kw - d + 1)
        if k.size == 0:
            break
        band = spec.x_elements[n0 + k, n0 + k + d]
        if np.max(np.abs(band)) < 1e-250:
            break
        groups = basis.groups
        for i in range(len(groups) - d):
            va = groups[i].eigenvectors
            vb = groups[i + d].eigenvectors
            pairs.append((va[: 2 * kw + 1 - d, :] * band[:, None]).T @ vb[d:, :])
        out[d] = pairs
    return out


def assemble_full_reference(
    spec: OscillatorSpectrum,
    basis: ResonanceBasis,
    drive: DriveParams,
    n_steps: Optional[int] = None,
    phase_per_step: float = 0.02,
) -> np.ndarray:
    """One-period operator from the unreduced equations of motion.

    Integrates i*hbar0 dC/dt = (hbar0 omega q + E^M) C - f0 (cos O1 t +
    cos O2 t) X_full C with the complete cosine drives (counter-rotating
    terms kept) and every odd group-distance block of x.  Intended for
    small windows; the step resolves the drive frequency itself.
    """
    drive.validate()
    g, s = basis.n_groups, basis.group_size
    dim = g * s
    qs = basis.q_values()
    energies = (basis.em_matrix() + basis.hbar0 * basis.omega * qs[:, None]).reshape(-1)
    x_full = np.zeros((dim, dim))
    for d, pairs in _drive_blocks_full(spec, basis).items():
        for i, blk in enumerate(pairs):
            r = slice(i * s, (i + 1) * s)
            c = slice((i + d) * s, (i + d + 1) * s)
            x_full[r, c] = blk
            x_full[c, r] = blk.T

    period = drive.period
    if n_steps is None:
        rate = (energies.max() - energies.min()) / basis.hbar0 + drive.omega1
        n_steps = max(4096, int(np.ceil(period * rate / phase_per_step)))
    h = period / n_steps
    hbar0, f0 = basis.hbar0, drive.f0
    om1, om2 = drive.omega1, drive.omega2

    def rhs(t, c):
        drive_t = f0 * (np.cos(om1 * t) + np.cos(om2 * t))
        return (-1j / hbar0) * (energies[:, None] * c - drive_t * (x_full @ c))

    c = np.eye(dim, dtype=np.complex128)
    for n in range(n_steps):
        t = n * h
        k1 = rhs(t, c)
        k2 = rhs(t + 0.5 * h, c + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, c + 0.5 * h * k2)
        k4 = rhs(t + h, c + h * k3)
        c = c + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    return c
