"""Reduced stationary problem at the coupling resonance.

States are labeled (q, s): q = k + l is the group index (k = n - n0,
l = m - m0 the level offsets of the two oscillators), s the level index
inside a group.  Group q keeps the basis {|n0+k, m0+q-k>, k = -K..K} and
the Hamiltonian

    H^(q)_{k,k'} = E''_{n0} (k^2 - q k + q^2/2) delta_{k,k'}
                   - mu * x_{n0+k, n0+k'} * y_{m0+q-k, m0+q-k'}

with the common shift hbar0*omega*q recorded separately.  Only couplings
that stay inside the group survive (the compensating odd-offset pairs);
off-resonant inter-group mu-couplings are dropped.  Each group is a
quantum pendulum: equidistant bottom levels, an accumulation of level
spacings at the separatrix, quasi-degenerate doublets above it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import ClassificationError, IndexRangeError, ValidationError
from .oscillator import OscillatorSpectrum, anharmonicity, level_frequency


@dataclass(frozen=True)
class ResonanceParams:
    """Window of the reduced problem.

    k_halfwidth K gives 2K+1 states per group (the paper geometry uses
    K = 60, i.e. 121 states); q_halfwidth Q keeps groups q = -Q..Q.
    parity_sector restricts the group list for stationary-structure runs
    ("even"/"odd" p); the driven problem needs "both".
    """

    mu: float
    n0: int
    k_halfwidth: int
    q_halfwidth: int
    parity_sector: str = "both"
    separatrix_window: int = 5
    doublet_ratio: float = 0.1

    def validate(self, spectrum: Optional[OscillatorSpectrum] = None):
        if self.mu < 0:
            raise ValidationError(f"mu must be >= 0, got {self.mu}")
        if self.k_halfwidth < 1 or self.q_halfwidth < 0:
            raise ValidationError("k_halfwidth >= 1 and q_halfwidth >= 0 required")
        if self.parity_sector not in ("both", "even", "odd"):
            raise ValidationError(f"bad parity_sector {self.parity_sector!r}")
        if self.separatrix_window < 1:
            raise ValidationError("separatrix_window must be >= 1")
        reach = self.k_halfwidth + self.q_halfwidth
        if self.n0 - reach < 0:
            raise ValidationError(
                f"n0 - K - Q = {self.n0 - reach} < 0; window leaves the spectrum"
            )
        if spectrum is not None and self.n0 + reach > spectrum.n_max:
            raise IndexRangeError(
                f"n0 + K + Q = {self.n0 + reach} exceeds solved n_max "
                f"{spectrum.n_max}"
            )

    @property
    def group_size(self) -> int:
        return 2 * self.k_halfwidth + 1

    def group_indices(self):
        qs = range(-self.q_halfwidth, self.q_halfwidth + 1)
        if self.parity_sector == "even":
            return [q for q in qs if q % 2 == 0]
        if self.parity_sector == "odd":
            return [q for q in qs if q % 2 != 0]
        return list(qs)


@dataclass
class GroupSpectrum:
    """Diagonalized group q: Mathieu-like levels and eigenvectors over k.

    levels are sorted ascending (2K+1 of them); eigenvectors[:, s] is the
    k-space vector of level s; shift = hbar0*omega*q is the recorded group
    offset so the total energy is shift + levels[s] (+ 2*E_{n0}).
    Classification fills the separatrix/inside/above sets and the
    quasi-degenerate doublet pairing of the above set.
    """

    q: int
    levels: np.ndarray
    eigenvectors: np.ndarray
    shift: float
    inside_set: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    separatrix_set: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    above_set: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    separatrix_index: int = -1
    doublets: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.levels)


def build_group_hamiltonian(
    spec: OscillatorSpectrum, params: ResonanceParams, q: int
) -> np.ndarray:
    """Symmetric (2K+1)x(2K+1) matrix of group q over the k index."""
    params.validate(spec)
    if abs(q) > params.q_halfwidth:
        raise IndexRangeError(f"group {q} outside +-{params.q_halfwidth}")
    n0 = params.n0
    k = np.arange(-params.k_halfwidth, params.k_halfwidth + 1)
    epp = anharmonicity(spec, n0)
    diag = epp * (k**2 - q * k + q * q / 2.0)
    x_idx = n0 + k
    y_idx = n0 + q - k
    # product first: keeps the k -> q-k exchange symmetry exact in floats
    h = spec.x_elements[np.ix_(x_idx, x_idx)] * spec.x_elements[np.ix_(y_idx, y_idx)]
    h *= -params.mu
    np.fill_diagonal(h, 0.0)
    h += np.diag(diag)
    return h


def _gauge_fix(vecs: np.ndarray) -> np.ndarray:
    for j in range(vecs.shape[1]):
        peak = np.argmax(np.abs(vecs[:, j]))
        if vecs[peak, j] < 0:
            vecs[:, j] *= -1.0
    return vecs


def classify_states(group: GroupSpectrum, window: int = 5, doublet_ratio: float = 0.1,
                    min_contrast: float = 0.6) -> GroupSpectrum:
    """Locate the separatrix accumulation and split the group levels.

    The spacing profile used is the two-level gap g_s = E_{s+2} - E_s,
    which stays smooth through the quasi-degenerate doublets above the
    separatrix and dips only at the accumulation point.  The separatrix
    set is the +-window levels around the minimum; inside/above are the
    complements.  Doublets are adjacent above-set pairs whose splitting is
    below doublet_ratio of the local two-level gap.
    """
    e = group.levels
    n = e.size
    if n < 2 * window + 5:
        raise ClassificationError(f"group too small to classify ({n} levels)")
    g2 = e[2:] - e[:-2]
    lo = max(1, window // 2)
    hi = n - 2 - lo
    interior = g2[lo:hi]
    s_min = int(np.argmin(interior)) + lo + 1  # +1: center of the two-level gap
    bottom_ref = np.median(g2[: max(3, n // 8)])
    if g2[s_min - 1] >= min_contrast * bottom_ref:
        raise ClassificationError(
            "no spacing accumulation found (minimum two-level gap "
            f"{g2[s_min - 1]:.3e} vs bottom reference {bottom_ref:.3e}); "
            "mu too small for a resolved separatrix"
        )
    if s_min <= window or s_min >= n - 1 - window:
        raise ClassificationError(
            f"spacing minimum at edge (s = {s_min}); window does not bracket "
            "the separatrix"
        )
    sep = np.arange(s_min - window, s_min + window + 1)
    inside = np.arange(0, s_min - window)
    above = np.arange(s_min + window + 1, n)

    doublets = []
    gaps = np.diff(e)
    for s in above[:-1]:
        local = e[min(s + 2, n - 1)] - e[max(s - 1, 0)]
        if gaps[s] < doublet_ratio * max(local, 1e-300) and (
            not doublets or doublets[-1][1] != s
        ):
            doublets.append((int(s), int(s + 1), float(gaps[s])))

    group.inside_set = inside
    group.separatrix_set = sep
    group.above_set = above
    group.separatrix_index = s_min
    group.doublets = doublets
    return group


def diagonalize_groups(
    params: ResonanceParams,
    spec: OscillatorSpectrum,
    classify: bool = True,
) -> list[GroupSpectrum]:
    """Diagonalize every group in the window (sorted levels, gauge-fixed)."""
    params.validate(spec)
    omega = level_frequency(spec, params.n0)
    groups = []
    for q in params.group_indices():
        h = build_group_hamiltonian(spec, params, q)
        vals, vecs = scipy.linalg.eigh(h)
        g = GroupSpectrum(
            q=q,
            levels=vals,
            eigenvectors=_gauge_fix(vecs),
            shift=spec.hbar0 * omega * q,
        )
        if classify and params.mu > 0:
            classify_states(
                g, window=params.separatrix_window, doublet_ratio=params.doublet_ratio
            )
        groups.append(g)
    return groups


def group_shift_deviation(groups: list[GroupSpectrum]) -> float:
    """max_{q,s} |E^M_{q,s} - E^M_{0,s}|, the measured q-dependence of E^M."""
    center = next(g for g in groups if g.q == 0)
    return max(
        float(np.max(np.abs(g.levels - center.levels))) for g in groups
    )


@dataclass
class TransitionMatrix:
    """Blocks x_{q,s; q+1,s'} for every adjacent group pair.

    blocks[i] couples groups qs[i] and qs[i] + 1; blocks[i][s, s'] is the
    element between level s of group qs[i] and level s' of group qs[i]+1.
    """

    qs: list
    blocks: list

    def block(self, q: int) -> np.ndarray:
        return self.blocks[self.qs.index(q)]


def transition_elements(
    groups: list[GroupSpectrum],
    spec: OscillatorSpectrum,
    params: ResonanceParams,
) -> TransitionMatrix:
    """Inter-group drive matrix elements.

    The drive x changes n by +-1 at fixed m, so only k' = k + 1 survives
    between groups q and q+1:
        x_{q,s; q+1,s'} = sum_k v^{(q,s)}_k x_{n0+k, n0+k+1} v^{(q+1,s')}_{k+1}.
    """
    by_q = {g.q: g for g in groups}
    qs_all = sorted(by_q)
    n0, kw = params.n0, params.k_halfwidth
    k = np.arange(-kw, kw)  # k and k+1 both inside the window
    x_band = spec.x_elements[n0 + k, n0 + k + 1]
    qs, blocks = [], []
    for q in qs_all[:-1]:
        if q + 1 not in by_q:
            raise IndexRangeError(f"missing neighbor group {q + 1}")
        va = by_q[q].eigenvectors  # (2K+1, S) over k index rows
        vb = by_q[q + 1].eigenvectors
        blocks.append((va[:-1, :] * x_band[:, None]).T @ vb[1:, :])
        qs.append(q)
    return TransitionMatrix(qs=qs, blocks=blocks)


@dataclass
class ResonanceBasis:
    """Everything the Floquet stage needs: group spectra and drive blocks."""

    params: ResonanceParams
    hbar0: float
    omega: float
    epp: float
    e_center: float
    groups: list
    transitions: TransitionMatrix

    @property
    def group_size(self) -> int:
        return self.params.group_size

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def dim(self) -> int:
        return self.n_groups * self.group_size

    def group(self, q: int) -> GroupSpectrum:
        for g in self.groups:
            if g.q == q:
                return g
        raise IndexRangeError(f"group {q} not in basis")

    def em_matrix(self) -> np.ndarray:
        """E^M levels stacked as (n_groups, group_size), group order as built."""
        return np.stack([g.levels for g in self.groups])

    def q_values(self) -> np.ndarray:
        return np.array([g.q for g in self.groups])


def build_basis(
    spec: OscillatorSpectrum, params: ResonanceParams, classify: bool = True
) -> ResonanceBasis:
    if params.parity_sector != "both":
        raise ValidationError(
            "a drive-ready basis needs parity_sector='both' (adjacent groups)"
        )
    groups = diagonalize_groups(params, spec, classify=classify)
    trans = transition_elements(groups, spec, params)
    return ResonanceBasis(
        params=params,
        hbar0=spec.hbar0,
        omega=level_frequency(spec, params.n0),
        epp=anharmonicity(spec, params.n0),
        e_center=2.0 * float(spec.energies[params.n0]),
        groups=groups,
        transitions=trans,
    )
