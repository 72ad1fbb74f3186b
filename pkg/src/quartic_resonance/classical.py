"""Classical reference dynamics for the driven coupled quartic oscillators.

Equations of motion from H = px^2/2 + py^2/2 + x^4/4 + y^4/4 - mu*x*y
- f0*x*(cos(Omega1 t) + cos(Omega2 t)):

    x' = px,   px' = -x^3 + mu*y + f0*(cos(Omega1 t) + cos(Omega2 t))
    y' = py,   py' = -y^3 + mu*x

Provides the symplectic trajectory integrator, single-oscillator orbit and
action tools (the quartic well is exactly dilation-covariant, so everything
reduces to one universal orbit), the pendulum reduction of the coupling
resonance, a twin-trajectory chaos indicator, the stochastic-layer scan,
and the ensemble diffusion measurement along the resonance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._kernels import yoshida4_ensemble
from .errors import LayerDetectionError, NumericalError, ValidationError
from .fitting import linear_fit
from .oscillator import _gauss_legendre

# ---------------------------------------------------------------------------
# Single-oscillator orbit machinery (H = p^2/2 + x^4/4, unit mass)
# ---------------------------------------------------------------------------

_ORBIT_SAMPLES = 8192
_orbit_cache: dict = {}


def quartic_turning_point(energy: float) -> float:
    return (4.0 * energy) ** 0.25


def quartic_period(energy: float) -> float:
    """Oscillation period; T(E) = T(1) * E^(-1/4) by dilation covariance."""
    theta, w = _gauss_legendre(0.0, 0.5 * np.pi)
    s = np.sin(theta)
    # T(1) = 4*x_t(1)/sqrt(2) * int_0^1 du/sqrt(1-u^4), u = sin(theta)
    t1 = 4.0 * quartic_turning_point(1.0) / np.sqrt(2.0) * float(
        np.sum(w / np.sqrt(1.0 + s * s))
    )
    return t1 * energy ** (-0.25)


def quartic_omega(energy: float) -> float:
    return 2.0 * np.pi / quartic_period(energy)


def quartic_action(energy: float) -> float:
    """I(E) = oint p dx / (2 pi)."""
    theta, w = _gauss_legendre(0.0, 0.5 * np.pi)
    s = np.sin(theta)
    s1 = 8.0 * float(np.sum(w * np.cos(theta) ** 2 * np.sqrt(1.0 + s * s)))
    return s1 * energy**0.75 / (2.0 * np.pi)


def quartic_domega_dI(energy: float) -> float:
    """d omega / d I = omega * d omega / dE; omega ~ E^(1/4) exactly here."""
    om = quartic_omega(energy)
    return om * om / (4.0 * energy)


def _universal_orbit():
    """One period of the E = 1 orbit, finely integrated and tabulated."""
    if "orbit" in _orbit_cache:
        return _orbit_cache["orbit"]
    t1 = quartic_period(1.0)
    n = _ORBIT_SAMPLES
    sub = 32
    h = t1 / (n * sub)
    x = np.array([quartic_turning_point(1.0)])
    p = np.array([0.0])
    y = np.zeros(1)
    py = np.zeros(1)
    xs = np.empty(n + 1)
    ps = np.empty(n + 1)
    xs[0], ps[0] = x[0], p[0]
    for i in range(n):
        yoshida4_ensemble(x, p, y, py, 0.0, h, sub, 0.0, 0.0, 1.0, 1.0)
        xs[i + 1], ps[i + 1] = x[0], p[0]
    theta = np.linspace(0.0, 2.0 * np.pi, n + 1)
    _orbit_cache["orbit"] = (theta, xs, ps)
    return _orbit_cache["orbit"]


def orbit_state(energy: float, theta: float):
    """(x, p) on the unperturbed orbit at angle theta from the +x turning point."""
    th, xs, ps = _universal_orbit()
    th_mod = np.mod(theta, 2.0 * np.pi)
    s = energy**0.25
    return s * np.interp(th_mod, th, xs), s * s * np.interp(th_mod, th, ps)


def fourier_amplitude(energy: float, harmonic: int = 1) -> float:
    """Fourier coefficient a_r of x(t) = sum_r a_r cos(r*omega*t)."""
    th, xs, _ = _universal_orbit()
    # trapezoid over one period; endpoints are identical samples
    integrand = xs * np.cos(harmonic * th)
    a = np.trapezoid(integrand, th) / np.pi
    return energy**0.25 * float(a)


@dataclass(frozen=True)
class ResonancePendulum:
    """Pendulum reduction of the coupling resonance at equal energies.

    Slow Hamiltonian  h = (domega/dI) * Delta^2 - v0 * cos(psi),
    psi = theta_x - theta_y, Delta = (I_x - I_y)/2.  The hyperbolic point
    sits at psi = pi with slow energy +v0; the layer offsets measured by
    the scan are relative to that value and share the energy scale of the
    quantum group spectra.
    """

    energy_per_oscillator: float
    mu: float
    omega: float
    a1: float
    domega_dI: float
    v0: float
    omega_tilde: float


def coupling_pendulum(mu: float, energy_per_oscillator: float) -> ResonancePendulum:
    om = quartic_omega(energy_per_oscillator)
    a1 = fourier_amplitude(energy_per_oscillator, 1)
    dwdi = quartic_domega_dI(energy_per_oscillator)
    v0 = 0.5 * mu * a1 * a1
    omega_tilde = a1 * np.sqrt(mu * dwdi)
    return ResonancePendulum(
        energy_per_oscillator=energy_per_oscillator,
        mu=mu,
        omega=om,
        a1=a1,
        domega_dI=dwdi,
        v0=v0,
        omega_tilde=omega_tilde,
    )


# ---------------------------------------------------------------------------
# Trajectory integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassicalParams:
    mu: float
    f0: float
    omega1: float
    omega2: float

    def validate(self):
        if self.mu < 0 or self.f0 < 0:
            raise ValidationError("mu and f0 must be non-negative")
        if self.f0 > 0 and (self.omega1 <= 0 or self.omega2 <= 0):
            raise ValidationError("drive frequencies must be positive when f0 > 0")


@dataclass
class ClassicalState:
    x: float
    px: float
    y: float
    py: float
    t: float = 0.0

    def as_arrays(self):
        return (
            np.array([self.x]),
            np.array([self.px]),
            np.array([self.y]),
            np.array([self.py]),
        )


def hamiltonian_unperturbed(x, px, y, py, mu):
    """H0x + H0y - mu*x*y (the drive-free energy; conserved at f0 = 0)."""
    return 0.5 * (px**2 + py**2) + 0.25 * (x**4 + y**4) - mu * x * y


def oscillator_energies(x, px, y, py):
    return 0.5 * px**2 + 0.25 * x**4, 0.5 * py**2 + 0.25 * y**4


@dataclass
class ClassicalTrajectory:
    times: np.ndarray
    x: np.ndarray
    px: np.ndarray
    y: np.ndarray
    py: np.ndarray
    params: ClassicalParams
    step: float


def default_step(energy: float, safety: float = 0.02) -> float:
    """Step with h * omega(E) = safety for the faster oscillator."""
    return safety / quartic_omega(energy)


_STEP_SAFETY_LIMIT = 0.05
_ESCAPE_FACTOR = 10.0


def _check_step(h: float, s0_energies, t_extra_energy: float = 0.0):
    e_max = max(max(s0_energies), 1e-300) + t_extra_energy
    if abs(h) * quartic_omega(e_max) >= _STEP_SAFETY_LIMIT:
        raise ValidationError(
            f"step {h:.3g} too large: h*omega = "
            f"{abs(h) * quartic_omega(e_max):.3g} >= {_STEP_SAFETY_LIMIT}"
        )


def integrate_trajectory(
    s0: ClassicalState,
    params: ClassicalParams,
    t_end: float,
    h: Optional[float] = None,
    sample_dt: Optional[float] = None,
) -> ClassicalTrajectory:
    """Integrate one trajectory, sampled every sample_dt (default t_end/512).

    The step is snapped so sample_dt is an integer number of steps; the
    pre-condition h*omega < 0.05 is enforced against the initial oscillator
    energies, and escape (overflow) is detected at every sample.
    """
    params.validate()
    if t_end <= 0:
        raise ValidationError("t_end must be positive (sign of h sets direction)")
    ex, ey = oscillator_energies(s0.x, s0.px, s0.y, s0.py)
    if h is None:
        h = default_step(max(ex, ey, 1e-12))
    _check_step(h, (ex, ey))
    if sample_dt is None:
        sample_dt = t_end / 512.0
    n_sub = max(1, int(np.ceil(sample_dt / abs(h))))
    h_eff = np.sign(h) * sample_dt / n_sub
    n_samples = int(round(t_end / sample_dt))

    x, px, y, py = s0.as_arrays()
    times = np.empty(n_samples + 1)
    xs = np.empty(n_samples + 1)
    pxs = np.empty(n_samples + 1)
    ys = np.empty(n_samples + 1)
    pys = np.empty(n_samples + 1)
    times[0], xs[0], pxs[0], ys[0], pys[0] = s0.t, s0.x, s0.px, s0.y, s0.py
    escape = _ESCAPE_FACTOR * quartic_turning_point(max(ex, ey, 1e-12))
    t = s0.t
    for i in range(n_samples):
        t = yoshida4_ensemble(
            x, px, y, py, t, h_eff, n_sub, params.mu, params.f0,
            params.omega1, params.omega2,
        )
        if not (np.isfinite(x[0]) and np.isfinite(y[0])) or max(
            abs(x[0]), abs(y[0])
        ) > escape:
            raise NumericalError(f"trajectory escaped at t = {t:.6g}")
        times[i + 1] = t
        xs[i + 1], pxs[i + 1], ys[i + 1], pys[i + 1] = x[0], px[0], y[0], py[0]
    return ClassicalTrajectory(
        times=times, x=xs, px=pxs, y=ys, py=pys, params=params, step=h_eff
    )


def _integrate_ensemble(states, params, t0, h, nsteps):
    x, px, y, py = states
    return yoshida4_ensemble(
        x, px, y, py, t0, h, nsteps, params.mu, params.f0,
        params.omega1, params.omega2,
    )


# ---------------------------------------------------------------------------
# Chaos indicator (twin-trajectory renormalized divergence)
# ---------------------------------------------------------------------------


def finite_time_lyapunov(
    s0_arrays,
    params: ClassicalParams,
    t_total: float,
    h: float,
    d0: float = 1e-8,
    renorm_every: int = 200,
    t0: float = 0.0,
) -> np.ndarray:
    """Finite-time separation exponent per ensemble member.

    s0_arrays = (x, px, y, py) arrays of shape (M,).  A twin displaced by d0
    along x is integrated alongside; the pair distance is renormalized back
    to d0 every renorm_every steps and the log growth accumulated.
    """
    x, px, y, py = (np.array(a, dtype=float) for a in s0_arrays)
    m = x.size
    scale = d0 * max(1.0, float(np.max(np.abs(x))))
    xt, pxt, yt, pyt = x + scale, px.copy(), y.copy(), py.copy()

    n_total = int(np.ceil(t_total / h / renorm_every))
    logsum = np.zeros(m)
    t = t0
    xx = np.concatenate([x, xt])
    ppx = np.concatenate([px, pxt])
    yy = np.concatenate([y, yt])
    ppy = np.concatenate([py, pyt])
    for _ in range(n_total):
        t_new = yoshida4_ensemble(
            xx, ppx, yy, ppy, t, h, renorm_every, params.mu, params.f0,
            params.omega1, params.omega2,
        )
        t = t_new
        dx = xx[m:] - xx[:m]
        dpx = ppx[m:] - ppx[:m]
        dy = yy[m:] - yy[:m]
        dpy = ppy[m:] - ppy[:m]
        d = np.sqrt(dx**2 + dpx**2 + dy**2 + dpy**2)
        if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
            raise NumericalError("twin distance underflow/overflow in indicator")
        logsum += np.log(d / scale)
        r = scale / d
        xx[m:] = xx[:m] + dx * r
        ppx[m:] = ppx[:m] + dpx * r
        yy[m:] = yy[:m] + dy * r
        ppy[m:] = ppy[:m] + dpy * r
    return logsum / (t - t0)


def chaos_indicator(
    s0: ClassicalState,
    params: ClassicalParams,
    t_total: float,
    h: Optional[float] = None,
) -> float:
    """Finite-time twin-divergence exponent for a single initial state."""
    ex, ey = oscillator_energies(s0.x, s0.px, s0.y, s0.py)
    if h is None:
        h = default_step(max(ex, ey, 1e-12))
    _check_step(h, (ex, ey))
    period = quartic_period(max(ex, ey, 1e-12))
    if t_total < 20.0 * period:
        raise ValidationError(
            f"indicator window {t_total:.3g} shorter than 20 oscillations"
        )
    lam = finite_time_lyapunov(
        ([s0.x], [s0.px], [s0.y], [s0.py]), params, t_total, h, t0=s0.t
    )
    return float(lam[0])


# ---------------------------------------------------------------------------
# Stochastic-layer scan
# ---------------------------------------------------------------------------


@dataclass
class LayerMeasurement:
    """Measured stochastic layer of the coupling resonance.

    Offsets eta are slow energies relative to the separatrix value (the
    hyperbolic point), in the same units as the quantum group spectra E^M.
    """

    e_center: float
    pendulum: ResonancePendulum
    etas: np.ndarray
    indicators: np.ndarray
    chaotic: np.ndarray
    threshold: float
    eta_lo: float
    eta_hi: float
    layer_width: float
    m_s: Optional[int] = None
    center: tuple = field(default_factory=tuple)


def layer_state(eta: float, pend: ResonancePendulum, e_center: float, alpha: float = 0.0):
    """Initial condition at slow-energy offset eta from the separatrix.

    eta <= 0: equal oscillator energies, relative phase arccos(-(1+eta/v0))
    (libration side); eta > 0: anti-phase motion with the oscillator
    energies split (rotation side).  alpha shifts the common fast phase.
    """
    e_half = 0.5 * e_center
    if eta <= 0.0:
        if eta < -2.0 * pend.v0:
            raise ValidationError("libration offset below the well bottom")
        psi = np.arccos(np.clip(-(1.0 + eta / pend.v0), -1.0, 1.0))
        ex = ey = e_half
    else:
        delta = pend.omega * np.sqrt(eta / pend.domega_dI)
        psi = np.pi
        ex, ey = e_half + delta, e_half - delta
        if ey <= 0:
            raise ValidationError("rotation offset exceeds the energy split range")
    x, px = orbit_state(ex, alpha)
    y, py = orbit_state(ey, alpha - psi)
    return ClassicalState(x=x, px=px, y=y, py=py, t=0.0)


def bimodal_threshold(values: np.ndarray, min_fraction: float = 0.02,
                      min_separation: float = 1.0) -> float:
    """Two-population split of the log-indicator histogram.

    The split maximizes the between-class variance (Otsu's criterion) over
    the sorted log values, restricted so both classes keep at least
    min_fraction of the points; the class means must separate by at least
    min_separation in log units (a factor ~e in the indicator), otherwise
    the scan is declared unresolved.
    """
    v = np.sort(np.log(np.maximum(values, 1e-300)))
    n = v.size
    k_min = max(2, int(min_fraction * n))
    if n < 2 * k_min + 2:
        raise LayerDetectionError("scan too small for threshold calibration")
    csum = np.cumsum(v)
    total = csum[-1]
    best_k, best_score = -1, -np.inf
    for k in range(k_min, n - k_min):
        m_lo = csum[k - 1] / k
        m_hi = (total - csum[k - 1]) / (n - k)
        score = k * (n - k) * (m_hi - m_lo) ** 2
        if score > best_score:
            best_score, best_k = score, k
    m_lo = csum[best_k - 1] / best_k
    m_hi = (total - csum[best_k - 1]) / (n - best_k)
    if m_hi - m_lo < min_separation:
        raise LayerDetectionError(
            "no bimodal gap in the indicator histogram; layer unresolved "
            f"(class means separated by {m_hi - m_lo:.2f} log units)"
        )
    return float(np.exp(0.5 * (v[best_k - 1] + v[best_k])))


def map_stochastic_layer(
    params: ClassicalParams,
    e_center: float,
    n_scan: int = 400,
    eta_span: float = 1.2,
    t_indicator: Optional[float] = None,
    h: Optional[float] = None,
    threshold: Optional[float] = None,
) -> LayerMeasurement:
    """Scan slow-energy offsets across the separatrix and measure the layer.

    eta grid spans [-eta_span, +eta_span] * v0; each point is classified
    chaotic/regular by the twin-divergence indicator (threshold from the
    bimodal gap unless given).  The layer is the contiguous chaotic band
    containing the separatrix; its width is returned in energy units.
    """
    params.validate()
    if params.mu <= 0:
        raise ValidationError("layer mapping needs mu > 0")
    pend = coupling_pendulum(params.mu, 0.5 * e_center)
    eta_max = eta_span * pend.v0
    etas = np.linspace(-min(eta_max, 1.999 * pend.v0), eta_max, n_scan)
    states = [layer_state(eta, pend, e_center) for eta in etas]
    x = np.array([s.x for s in states])
    px = np.array([s.px for s in states])
    y = np.array([s.y for s in states])
    py = np.array([s.py for s in states])

    if h is None:
        h = default_step(0.75 * e_center)
    if t_indicator is None:
        t_indicator = 120.0 * 2.0 * np.pi / pend.omega_tilde
    lam = finite_time_lyapunov((x, px, y, py), params, t_indicator, h)
    lam = np.maximum(lam, 1e-300)

    thr = threshold if threshold is not None else bimodal_threshold(lam)
    chaotic = lam > thr
    if not np.any(chaotic):
        raise LayerDetectionError("no chaotic points found in the layer scan")

    # close isolated regular holes so one misclassified cell cannot split
    # the band, then take the contiguous run around the separatrix
    filled = chaotic.copy()
    hole_tol = 2
    run_start = None
    for i in range(n_scan + 1):
        inside = i < n_scan and not chaotic[i]
        if inside and run_start is None:
            run_start = i
        elif not inside and run_start is not None:
            if (i - run_start) <= hole_tol and run_start > 0 and i < n_scan:
                filled[run_start:i] = True
            run_start = None

    i_sep = int(np.argmin(np.abs(etas)))
    if not filled[i_sep]:
        near = np.where(filled)[0]
        if near.size == 0 or np.min(np.abs(etas[near])) > 0.2 * pend.v0:
            raise LayerDetectionError(
                "separatrix neighborhood classified regular; no layer at this "
                "resolution"
            )
        i_sep = near[np.argmin(np.abs(etas[near]))]
    lo = i_sep
    while lo > 0 and filled[lo - 1]:
        lo -= 1
    hi = i_sep
    while hi < n_scan - 1 and filled[hi + 1]:
        hi += 1
    d_eta = etas[1] - etas[0]
    eta_lo = etas[lo] - 0.5 * d_eta
    eta_hi = etas[hi] + 0.5 * d_eta
    sep_state = layer_state(0.0, pend, e_center)
    return LayerMeasurement(
        e_center=e_center,
        pendulum=pend,
        etas=etas,
        indicators=lam,
        chaotic=chaotic,
        threshold=thr,
        eta_lo=eta_lo,
        eta_hi=eta_hi,
        layer_width=eta_hi - eta_lo,
        center=(sep_state.x, sep_state.px, sep_state.y, sep_state.py),
    )


def count_levels_in_layer(
    em_levels: np.ndarray, em_separatrix: float, layer: LayerMeasurement
) -> int:
    """M_s: number of group levels inside the measured band around the separatrix."""
    lo = em_separatrix + layer.eta_lo
    hi = em_separatrix + layer.eta_hi
    return int(np.sum((em_levels >= lo) & (em_levels <= hi)))


# ---------------------------------------------------------------------------
# Classical diffusion along the resonance
# ---------------------------------------------------------------------------


@dataclass
class ClassicalDiffusionResult:
    d_classical: float
    rms_residual: float
    std_error: float
    ensemble_size: int
    fit_window: tuple
    variance_series: np.ndarray
    periods: np.ndarray
    escaped_fraction: float


def classical_diffusion(
    params: ClassicalParams,
    layer: LayerMeasurement,
    period: float,
    energy_unit: float,
    ensemble_size: int = 256,
    n_periods: int = 400,
    h: Optional[float] = None,
    seed: int = 0,
    fit_window: Optional[tuple] = None,
    n_bootstrap: int = 64,
) -> ClassicalDiffusionResult:
    """Growth rate of the ensemble variance of (H - E_center)/energy_unit squared.

    The ensemble is seeded uniformly across the measured layer band with a
    random common fast phase per member; H is the drive-free energy sampled
    stroboscopically every drive period.  energy_unit is hbar0*omega of the
    matching quantum run, so the slope is directly comparable to the
    quantum Delta_q observable.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    etas = rng.uniform(layer.eta_lo, layer.eta_hi, ensemble_size)
    alphas = rng.uniform(0.0, 2.0 * np.pi, ensemble_size)
    states = [
        layer_state(eta, layer.pendulum, layer.e_center, alpha)
        for eta, alpha in zip(etas, alphas)
    ]
    x = np.array([s.x for s in states])
    px = np.array([s.px for s in states])
    y = np.array([s.y for s in states])
    py = np.array([s.py for s in states])

    if h is None:
        h = default_step(0.75 * layer.e_center)
    n_sub = max(1, int(np.ceil(period / h)))
    h_eff = period / n_sub

    q_dev = np.empty((n_periods + 1, ensemble_size))
    q_dev[0] = (
        hamiltonian_unperturbed(x, px, y, py, params.mu) - layer.e_center
    ) / energy_unit
    t = 0.0
    for n in range(n_periods):
        t = yoshida4_ensemble(
            x, px, y, py, t, h_eff, n_sub, params.mu, params.f0,
            params.omega1, params.omega2,
        )
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"ensemble member escaped at period {n + 1}")
        q_dev[n + 1] = (
            hamiltonian_unperturbed(x, px, y, py, params.mu) - layer.e_center
        ) / energy_unit

    width_q = layer.layer_width / energy_unit
    escaped = float(np.mean(np.abs(q_dev[-1]) > 20.0 * max(width_q, 1e-300)))
    if escaped >= 1.0:
        raise NumericalError("entire ensemble left the layer region")

    periods = np.arange(n_periods + 1)
    variance = np.var(q_dev, axis=1)
    if fit_window is None:
        fit_window = (max(1, n_periods // 20), n_periods)
    i0, i1 = fit_window
    slope, _, rms = linear_fit(periods[i0 : i1 + 1], variance[i0 : i1 + 1])

    boots = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        pick = rng.integers(0, ensemble_size, ensemble_size)
        var_b = np.var(q_dev[:, pick], axis=1)
        boots[b], _, _ = linear_fit(periods[i0 : i1 + 1], var_b[i0 : i1 + 1])
    return ClassicalDiffusionResult(
        d_classical=slope,
        rms_residual=rms,
        std_error=float(np.std(boots)),
        ensemble_size=ensemble_size,
        fit_window=fit_window,
        variance_series=variance,
        periods=periods,
        escaped_fraction=escaped,
    )
