"""Stroboscopic wave-packet dynamics from the quasienergy decomposition.

A packet is expanded once in the QE states of the one-period operator and
rephased per period:

    C(NT) = sum_Q A^Q <A^Q, C(0)> exp(-i eps_Q N T / hbar0)

so a full trajectory costs one matrix product.  Observables follow the
group-index distribution P_q(N) = sum_s |C_{q,s}|^2: the packet center
q_tilde, the spread Delta_q, and the total energy dispersion in units of
(hbar0*omega)^2 (exported together with its intra-group part, which the
group-index spread alone does not see).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import IndexRangeError, ValidationError
from .fitting import linear_fit
from .floquet import FloquetOperator


@dataclass
class PacketState:
    """Amplitudes over the reduced (q, s) basis at an integer period count."""

    amplitudes: np.ndarray
    n_period: int = 0

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def make_initial_state(op: FloquetOperator, kind: str, q_start: int = 0,
                       above_offset: int = 10) -> PacketState:
    """Single-basis-state packet of the requested kind in group q_start.

    kind selects the level: "resonance-center" takes the group bottom,
    "separatrix" the spacing-minimum level, "above-separatrix" the level
    above_offset levels above the spacing minimum (must fall in the above
    set).
    """
    basis = op.basis
    qs = list(basis.q_values())
    if q_start not in qs:
        raise IndexRangeError(f"q_start = {q_start} outside groups {qs[0]}..{qs[-1]}")
    group = basis.group(q_start)
    if group.separatrix_index < 0:
        raise ValidationError("group not classified; rebuild basis with classify=True")
    if kind == "resonance-center":
        s = 0
    elif kind == "separatrix":
        s = group.separatrix_index
    elif kind == "above-separatrix":
        s = group.separatrix_index + above_offset
        if s not in group.above_set:
            raise IndexRangeError(
                f"above_offset {above_offset} does not land in the above set"
            )
    else:
        raise ValidationError(f"unknown initial-state kind {kind!r}")
    c = np.zeros(basis.dim, dtype=np.complex128)
    c[qs.index(q_start) * basis.group_size + s] = 1.0
    return PacketState(amplitudes=c)


@dataclass
class PacketTrajectory:
    """Per-period observable series of one packet."""

    periods: np.ndarray
    q_tilde: np.ndarray
    delta_q: np.ndarray
    energy_dispersion: np.ndarray
    intra_group_variance: np.ndarray
    label: str
    mu: float
    f0: float
    norm_drift: float


def evolve(
    op: FloquetOperator,
    psi0: PacketState,
    n_max: int,
    label: str = "",
    norm_tol: float = 1e-10,
) -> PacketTrajectory:
    """Propagate psi0 over N = 0..n_max periods via the spectral form."""
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    c0 = psi0.amplitudes
    if abs(np.linalg.norm(c0) - 1.0) > 1e-9:
        raise ValidationError("initial packet not normalized")
    basis = op.basis
    a = op.eigenvectors
    coef = a.conj().T @ c0
    n = np.arange(n_max + 1)
    phases = np.exp(
        (-1j * op.drive.period / basis.hbar0) * np.outer(op.quasienergies, n)
    )
    c_t = a @ (coef[:, None] * phases)

    norms = np.linalg.norm(c_t, axis=0)
    drift = float(np.max(np.abs(norms - 1.0)))
    if drift > max(norm_tol, 10.0 * op.unitarity_defect):
        raise ValidationError(
            f"norm drift {drift:.3e} during spectral propagation"
        )

    g, s = basis.n_groups, basis.group_size
    qs = basis.q_values().astype(float)
    p = (np.abs(c_t) ** 2).reshape(g, s, -1)
    p_q = p.sum(axis=1)
    q_tilde = qs @ p_q
    delta_q = ((qs[:, None] - q_tilde[None, :]) ** 2 * p_q).sum(axis=0)

    hw = basis.hbar0 * basis.omega
    e_scaled = (basis.em_matrix() + hw * qs[:, None]) / hw
    e_mean = (e_scaled[:, :, None] * p).sum(axis=(0, 1))
    e_var = ((e_scaled[:, :, None] - e_mean[None, None, :]) ** 2 * p).sum(axis=(0, 1))
    # conditional-variance piece: spread of E^M within each group
    em_scaled = basis.em_matrix() / hw
    mask = p_q > 1e-300
    em_mean_q = np.where(mask, (em_scaled[:, :, None] * p).sum(axis=1) / np.maximum(p_q, 1e-300), 0.0)
    intra = (
        ((em_scaled[:, :, None] - em_mean_q[:, None, :]) ** 2 * p).sum(axis=1)
    ).sum(axis=0)

    return PacketTrajectory(
        periods=n,
        q_tilde=q_tilde,
        delta_q=delta_q,
        energy_dispersion=e_var,
        intra_group_variance=intra,
        label=label,
        mu=basis.params.mu,
        f0=op.drive.f0,
        norm_drift=drift,
    )


@dataclass
class DiffusionEstimate:
    slope: float
    intercept: float
    rms_residual: float
    window: tuple
    n_sat: Optional[int]


def detect_saturation(
    traj: PacketTrajectory,
    initial_window: tuple = (50, 500),
    trailing_width: int = 200,
    fraction: float = 0.1,
    stride: int = 10,
    min_slope: float = 1e-9,
) -> Optional[int]:
    """Change-point where the trailing-window slope drops below fraction
    of the initial-window slope; None when growth never was (no-diffusion)
    or never stops.
    """
    n_max = int(traj.periods[-1])
    i0, i1 = initial_window
    if n_max < i1 + trailing_width:
        raise ValidationError(
            f"trajectory of {n_max} periods too short for saturation detection"
        )
    d0, _, _ = linear_fit(traj.periods[i0:i1], traj.delta_q[i0:i1])
    if d0 <= min_slope:
        return None
    for start in range(i1, n_max - trailing_width + 1, stride):
        d_tail, _, _ = linear_fit(
            traj.periods[start : start + trailing_width],
            traj.delta_q[start : start + trailing_width],
        )
        if d_tail < fraction * d0:
            n_sat = start
            if n_max < 2 * n_sat:
                raise ValidationError(
                    f"saturation candidate N = {n_sat} needs a trajectory of "
                    f">= {2 * n_sat} periods (have {n_max})"
                )
            return n_sat
    return None


def fit_diffusion(
    traj: PacketTrajectory,
    window: tuple = (50, 500),
    guard_saturation: bool = True,
    trailing_width: int = 200,
) -> DiffusionEstimate:
    """Least-squares slope of Delta_q versus N over the window."""
    n_max = int(traj.periods[-1])
    i0, i1 = window
    if not 0 <= i0 < i1 <= n_max:
        raise ValidationError(f"window {window} outside trajectory 0..{n_max}")
    n_sat = None
    if guard_saturation and n_max >= window[1] + trailing_width:
        n_sat = detect_saturation(
            traj, initial_window=window, trailing_width=trailing_width
        )
        if n_sat is not None and i1 > n_sat:
            raise ValidationError(
                f"fit window {window} overlaps saturation plateau at N = {n_sat}"
            )
    slope, intercept, rms = linear_fit(
        traj.periods[i0 : i1 + 1], traj.delta_q[i0 : i1 + 1]
    )
    return DiffusionEstimate(
        slope=slope, intercept=intercept, rms_residual=rms,
        window=(i0, i1), n_sat=n_sat,
    )


def separatrix_ensemble_diffusion(
    op: FloquetOperator,
    n_max: int = 1600,
    window: tuple = (50, 500),
    q_start: int = 0,
) -> dict:
    """Fitted D for every separatrix-set state of the start group.

    The saturation detector runs first for each state; when growth
    terminates inside the requested window the fit is shortened to the
    diffusive phase (window end at 80% of the change point), otherwise the
    default window applies.  Returns per-state slopes plus their mean and
    median (the layer-center ensemble statistics of the coupling scan).
    """
    group = op.basis.group(q_start)
    slopes, windows = [], []
    qs = list(op.basis.q_values())
    for s in group.separatrix_set:
        c = np.zeros(op.basis.dim, dtype=np.complex128)
        c[qs.index(q_start) * op.basis.group_size + int(s)] = 1.0
        traj = evolve(op, PacketState(c), n_max, label=f"sep:{s}")
        try:
            n_sat = detect_saturation(
                traj, initial_window=(20, min(250, window[1])),
                trailing_width=200,
            )
        except ValidationError:
            n_sat = None  # change point beyond half the trajectory: treat as late
        w1 = window[1] if n_sat is None else max(60, min(window[1], int(0.8 * n_sat)))
        w0 = min(window[0], w1 // 4)
        est = fit_diffusion(traj, window=(w0, w1), guard_saturation=False)
        slopes.append(est.slope)
        windows.append((w0, w1))
    slopes = np.array(slopes)
    return {
        "per_state": slopes,
        "windows": windows,
        "mean": float(np.mean(slopes)),
        "median": float(np.median(slopes)),
    }
