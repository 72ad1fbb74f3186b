"""Run configuration: one flat record driving every pipeline stage.

A RunConfig is validated up front (cross-parameter constraints included),
serialized canonically, and hashed; the hash is embedded in every output
so a CSV can always be traced to its exact inputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Optional

from .errors import ValidationError

CACHE_ENV = "QUARTIC_RES_CACHE_DIR"
OUTPUT_ENV = "QUARTIC_RES_OUTPUT_DIR"


@dataclass(frozen=True)
class RunConfig:
    # oscillator
    hbar0: float = 1.77e-5
    n0: int = 446
    n_max: Optional[int] = None  # None: n0 + K + Q + pad
    margin_factor: float = 1.6
    points_per_wavelength: float = 8.0
    # resonance window
    mu: float = 1e-4
    k_halfwidth: int = 60
    q_halfwidth: int = 8
    parity_sector: str = "both"
    separatrix_window: int = 5
    x_offset_cutoff: int = 9
    # drive
    f0_over_mu: float = 0.01
    delta_ratio: float = 0.2222
    max_cycles: int = 64
    phase_per_step: float = 0.25
    n_steps_override: Optional[int] = None
    # packet dynamics
    n_periods: int = 2000
    fit_window: tuple = (50, 500)
    above_offset: int = 10
    # classical reference
    ensemble_size: int = 256
    classical_periods: int = 400
    layer_scan_points: int = 400
    eta_span: float = 1.2
    indicator_cycles: float = 160.0
    # reproducibility / io
    seed: int = 12345
    output_dir: str = "out"
    cache_dir: str = "cache"

    @property
    def f0(self) -> float:
        return self.f0_over_mu * self.mu

    def resolved_n_max(self) -> int:
        if self.n_max is not None:
            return self.n_max
        return self.n0 + self.k_halfwidth + self.q_halfwidth + 4

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_ENV, self.output_dir)

    def resolved_cache_dir(self) -> str:
        return os.environ.get(CACHE_ENV, self.cache_dir)

    def validate(self) -> None:
        if self.hbar0 <= 0:
            raise ValidationError("hbar0 must be > 0")
        if self.mu < 0 or self.f0_over_mu < 0:
            raise ValidationError("mu and f0_over_mu must be >= 0")
        if self.k_halfwidth < 1 or self.q_halfwidth < 0:
            raise ValidationError("k_halfwidth >= 1, q_halfwidth >= 0 required")
        if self.parity_sector not in ("both", "even", "odd"):
            raise ValidationError(f"bad parity_sector {self.parity_sector!r}")
        reach = self.k_halfwidth + self.q_halfwidth
        if self.n0 - reach < 0:
            raise ValidationError(
                f"basis window leaves the spectrum: n0 - K - Q = {self.n0 - reach}"
            )
        if self.resolved_n_max() < self.n0 + reach:
            raise ValidationError(
                f"n_max {self.resolved_n_max()} below n0 + K + Q = {self.n0 + reach}"
            )
        if not 0 < self.delta_ratio < 1:
            raise ValidationError("delta_ratio must be in (0, 1)")
        if self.x_offset_cutoff < 1 or self.x_offset_cutoff % 2 == 0:
            raise ValidationError("x_offset_cutoff must be odd and >= 1")
        w = self.fit_window
        if len(w) != 2 or not 0 <= w[0] < w[1]:
            raise ValidationError(f"bad fit_window {w}")
        if self.n_periods < w[1]:
            raise ValidationError("n_periods shorter than the fit window")
        if self.ensemble_size < 2 or self.layer_scan_points < 16:
            raise ValidationError("ensemble/scan sizes too small")
        # validate oscillator sizing eagerly so no compute starts on a bad grid
        from .oscillator import OscillatorParams

        OscillatorParams.auto(
            self.hbar0,
            self.resolved_n_max(),
            margin_factor=self.margin_factor,
            points_per_wavelength=self.points_per_wavelength,
        ).validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fit_window"] = list(d["fit_window"])
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def replace(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update(kw)
        return from_dict(d)


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    if "fit_window" in d and d["fit_window"] is not None:
        d["fit_window"] = tuple(d["fit_window"])
    unknown = set(d) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ValidationError(f"unknown config fields: {sorted(unknown)}")
    return RunConfig(**d)


def load_config_file(path: str) -> RunConfig:
    with open(path) as fh:
        return from_dict(json.load(fh))


def paper_profile(**overrides) -> RunConfig:
    """Published-figure geometry: hbar0 ~ 1.77e-5, n0 = 446, 121-state groups."""
    return RunConfig().replace(**overrides)


def compact_profile(**overrides) -> RunConfig:
    """Reduced-scale geometry for fast runs and the reduced scan.

    Same structure as the paper profile at about one fifth the basis size:
    the coupling-resonance well fills ~80% of the k window (k_sep ~ 19 for
    K = 24, versus ~47 for K = 60 at paper scale).
    """
    cfg = RunConfig(
        hbar0=2e-3,
        n0=100,
        mu=2.8e-3,
        k_halfwidth=24,
        q_halfwidth=5,
        delta_ratio=0.125,  # rationalizes to 17/15: thicker layer at this scale
        n_periods=1200,
        ensemble_size=192,
        classical_periods=300,
        layer_scan_points=240,
    )
    return cfg.replace(**overrides) if overrides else cfg
