"""Stage orchestration: caching, figure data emission, parameter scans.

The pipeline owns the wiring between modules (spectrum -> basis -> operator
-> dynamics, plus the classical reference) and the reproducibility
machinery: every CSV embeds the resolved config hash, every command writes
a manifest with checksums, and scans are resumable from their manifest.
"""

from __future__ import annotations

import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cache import (
    basis_key,
    cache_path,
    file_sha256,
    load_basis,
    load_operator,
    load_spectrum,
    save_basis,
    save_operator,
    save_spectrum,
    spectrum_key,
)
from .classical import (
    ClassicalParams,
    classical_diffusion,
    count_levels_in_layer,
    map_stochastic_layer,
)
from .config import RunConfig
from .csvio import write_csv
from .dynamics import evolve, make_initial_state, separatrix_ensemble_diffusion
from .errors import (
    CacheCorruptionError,
    LayerDetectionError,
    QuarticResonanceError,
)
from .floquet import assemble_operator, delocalization_measures, make_drive
from .oscillator import (
    OscillatorParams,
    anharmonicity,
    level_frequency,
    solve_spectrum,
)
from .resonance import ResonanceParams, build_basis

FIG1_GROUPS = 2  # five groups q = -2..2
FIG3_GROUPS = 3  # scatter read in the q = 0, +-1 region
FIG4_GROUPS = 6

# paper-geometry scan grid (mu values; f0 = f0_over_mu * mu per point)
DEFAULT_SCAN_GRID = (3e-5, 5e-5, 8e-5, 1.25e-4, 2e-4)


@dataclass
class RunManifest:
    config_hash: str
    command: str
    version: str = __version__
    created_utc: str = ""
    files: list = field(default_factory=list)

    def add(self, path: str):
        self.files.append(
            {
                "name": os.path.basename(path),
                "sha256": file_sha256(path),
                "bytes": os.path.getsize(path),
            }
        )

    def write(self, path: str):
        self.created_utc = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)
        return path


class Pipeline:
    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.hash = config.config_hash()
        self._spectra: dict = {}

    # -- stages -----------------------------------------------------------

    def spectrum(self, n_max: int | None = None, use_cache: bool = True):
        cfg = self.config
        n_max = cfg.resolved_n_max() if n_max is None else n_max
        key = spectrum_key(
            cfg.hbar0, n_max, cfg.margin_factor, cfg.points_per_wavelength, "dvr"
        )
        if key in self._spectra:
            return self._spectra[key]
        path = cache_path(cfg.resolved_cache_dir(), "spectrum", key)
        spec = None
        if use_cache and os.path.exists(path):
            try:
                spec = load_spectrum(path)
            except CacheCorruptionError as exc:
                warnings.warn(f"spectrum cache rejected ({exc}); recomputing")
                spec = None
        if spec is None:
            params = OscillatorParams.auto(
                cfg.hbar0,
                n_max,
                margin_factor=cfg.margin_factor,
                points_per_wavelength=cfg.points_per_wavelength,
            )
            spec = solve_spectrum(params)
            save_spectrum(path, spec, include_wavefunctions=False)
        self._spectra[key] = spec
        return spec

    def resonance_params(self, mu=None, q_halfwidth=None, k_halfwidth=None):
        cfg = self.config
        return ResonanceParams(
            mu=cfg.mu if mu is None else mu,
            n0=cfg.n0,
            k_halfwidth=cfg.k_halfwidth if k_halfwidth is None else k_halfwidth,
            q_halfwidth=cfg.q_halfwidth if q_halfwidth is None else q_halfwidth,
            parity_sector=cfg.parity_sector,
            separatrix_window=cfg.separatrix_window,
        )

    def basis(self, mu=None, q_halfwidth=None, k_halfwidth=None, spec=None,
              use_cache: bool = True):
        rp = self.resonance_params(mu, q_halfwidth, k_halfwidth)
        if spec is None:
            n_max = rp.n0 + rp.k_halfwidth + rp.q_halfwidth + 4
            spec = self.spectrum(n_max=max(n_max, self.config.resolved_n_max()))
        key = basis_key(self.config.hbar0, rp)
        path = cache_path(self.config.resolved_cache_dir(), "basis", key)
        if use_cache and os.path.exists(path):
            try:
                return load_basis(path)
            except CacheCorruptionError as exc:
                warnings.warn(f"basis cache rejected ({exc}); recomputing")
        basis = build_basis(spec, rp)
        save_basis(path, basis)
        return basis

    def drive(self, basis, mu=None):
        cfg = self.config
        mu_eff = cfg.mu if mu is None else mu
        return make_drive(
            basis.omega,
            f0=cfg.f0_over_mu * mu_eff,
            delta_ratio=cfg.delta_ratio,
            max_cycles=cfg.max_cycles,
            f0_over_mu=cfg.f0_over_mu,
        )

    def operator(self, basis, drive, tag: str, use_cache: bool = True):
        cfg = self.config
        key = f"{self.hash}_{tag}"
        path = cache_path(cfg.resolved_cache_dir(), "floquet", key)
        if use_cache and os.path.exists(path):
            try:
                op = load_operator(path, basis, drive)
                if op.matrix.shape[0] == basis.dim:
                    return op
            except CacheCorruptionError as exc:
                warnings.warn(f"operator cache rejected ({exc}); recomputing")
        op = assemble_operator(
            basis,
            drive,
            n_steps=cfg.n_steps_override,
            phase_per_step=cfg.phase_per_step,
        )
        save_operator(path, op, self.hash)
        return op

    # -- commands ---------------------------------------------------------

    def spectrum_summary(self) -> str:
        cfg = self.config
        spec = self.spectrum()
        n0 = cfg.n0
        lines = [
            f"config_hash {self.hash}",
            f"method {spec.method} grid_points {spec.params.grid_points} "
            f"box {spec.params.grid_box_halfwidth:.17g}",
            f"convergence_defect {spec.convergence_defect:.3e}",
            f"E_n0 {spec.energies[n0]:.17g}",
            f"omega_n0 {level_frequency(spec, n0):.17g}",
            f"Epp_n0 {anharmonicity(spec, n0):.17g}",
        ]
        return "\n".join(lines)

    def _out(self, name: str) -> str:
        return os.path.join(self.config.resolved_output_dir(), name)

    def figure_fig1(self) -> list:
        basis = self.basis(q_halfwidth=min(FIG1_GROUPS, self.config.q_halfwidth))
        hw = basis.hbar0 * basis.omega
        rows_q, rows_s, rows_e = [], [], []
        for g in basis.groups:
            for s, em in enumerate(g.levels):
                rows_q.append(g.q)
                rows_s.append(s)
                rows_e.append((g.shift + em) / hw)
        path = write_csv(
            self._out(f"fig1_{self.hash}.csv"),
            {"group": rows_q, "s": rows_s, "energy_over_hbar0_omega": rows_e},
            self.hash,
            "group spectra at the coupling resonance: (group, s, E/hbar0*omega)",
        )
        return [path]

    def figure_fig2(self) -> list:
        basis = self.basis(q_halfwidth=1)
        block = np.abs(basis.transitions.block(0))
        s_idx, sp_idx = np.meshgrid(
            np.arange(block.shape[0]), np.arange(block.shape[1]), indexing="ij"
        )
        path = write_csv(
            self._out(f"fig2_{self.hash}.csv"),
            {
                "s": s_idx.ravel(),
                "s_prime": sp_idx.ravel(),
                "abs_x": block.ravel(),
            },
            self.hash,
            "drive matrix elements between groups q=0 and q=1: (s, s', |x|)",
        )
        return [path]

    def figure_fig3(self, mu=None) -> list:
        mu = self.config.mu if mu is None else mu
        basis = self.basis(mu=mu, q_halfwidth=min(FIG3_GROUPS, self.config.q_halfwidth))
        drive = self.drive(basis, mu=mu)
        op = self.operator(basis, drive, tag=f"fig3_mu{mu:.6e}")
        qbar, sigma = delocalization_measures(op)
        path = write_csv(
            self._out(f"fig3_mu{mu:.6e}_{self.hash}.csv"),
            {
                "Q": np.arange(op.dim),
                "q_bar": qbar,
                "sqrt_sigma_q": np.sqrt(sigma),
            },
            self.hash,
            "QE-state centers and spreads over the group index",
            extra_header=[
                f"mu: {mu:.17g}",
                f"unitarity_defect: {op.unitarity_defect:.3e}",
                f"edge_leak: {op.edge_leak:.3e}",
            ],
        )
        return [path]

    def figure_fig4(self) -> list:
        cfg = self.config
        basis = self.basis(q_halfwidth=min(FIG4_GROUPS, cfg.q_halfwidth))
        drive = self.drive(basis)
        op = self.operator(basis, drive, tag="fig4")
        cols = {
            "N": [], "Delta_q": [], "energy_dispersion": [],
            "intra_group_variance": [], "label": [],
        }
        for kind in ("resonance-center", "above-separatrix", "separatrix"):
            psi0 = make_initial_state(op, kind, above_offset=cfg.above_offset)
            traj = evolve(op, psi0, cfg.n_periods, label=kind)
            cols["N"].extend(traj.periods.tolist())
            cols["Delta_q"].extend(traj.delta_q.tolist())
            cols["energy_dispersion"].extend(traj.energy_dispersion.tolist())
            cols["intra_group_variance"].extend(traj.intra_group_variance.tolist())
            cols["label"].extend([kind] * len(traj.periods))
        path = write_csv(
            self._out(f"fig4_{self.hash}.csv"),
            cols,
            self.hash,
            "packet spreading along the resonance: (N, Delta_q, energy "
            "dispersion, intra-group variance, label)",
            extra_header=[f"mu: {cfg.mu:.17g}", f"f0: {cfg.f0:.17g}"],
        )
        return [path]

    # -- classical wiring ---------------------------------------------------

    def classical_params(self, basis, drive, mu=None) -> ClassicalParams:
        mu = self.config.mu if mu is None else mu
        return ClassicalParams(
            mu=mu, f0=self.config.f0_over_mu * mu,
            omega1=drive.omega1, omega2=drive.omega2,
        )

    def layer(self, basis, drive, mu=None, seed_tag: int = 0):
        """Measured layer with M_s attached.

        Thin layers can fall below the scan resolution at the configured
        span; the span is narrowed in a deterministic cascade before the
        measurement is declared failed.
        """
        cfg = self.config
        cp = self.classical_params(basis, drive, mu)
        t_ind = cfg.indicator_cycles * 2.0 * np.pi / _pendulum_omega(cp.mu, basis)
        layer = None
        last_exc = None
        for span in (cfg.eta_span, cfg.eta_span / 3.0, cfg.eta_span / 9.0):
            try:
                layer = map_stochastic_layer(
                    cp,
                    e_center=basis.e_center,
                    n_scan=cfg.layer_scan_points,
                    eta_span=span,
                    t_indicator=t_ind,
                )
                break
            except LayerDetectionError as exc:
                last_exc = exc
        if layer is None:
            raise last_exc
        g0 = basis.group(0)
        layer.m_s = count_levels_in_layer(
            g0.levels, g0.levels[g0.separatrix_index], layer
        )
        return layer

    def classical_command(self, mu=None) -> list:
        cfg = self.config
        mu = cfg.mu if mu is None else mu
        basis = self.basis(mu=mu, q_halfwidth=1)
        drive = self.drive(basis, mu=mu)
        cp = self.classical_params(basis, drive, mu)
        layer = self.layer(basis, drive, mu=mu)
        dcl = classical_diffusion(
            cp,
            layer,
            period=drive.period,
            energy_unit=basis.hbar0 * basis.omega,
            ensemble_size=cfg.ensemble_size,
            n_periods=cfg.classical_periods,
            seed=cfg.seed,
        )
        scan_path = write_csv(
            self._out(f"layer_scan_mu{mu:.6e}_{self.hash}.csv"),
            {
                "offset": layer.etas,
                "indicator": layer.indicators,
                "classification": layer.chaotic.astype(int),
            },
            self.hash,
            "stochastic-layer scan: (slow-energy offset, indicator, chaotic?)",
            extra_header=[
                f"mu: {mu:.17g}",
                f"layer_width: {layer.layer_width:.17g}",
                f"M_s: {layer.m_s}",
                f"threshold: {layer.threshold:.17g}",
            ],
        )
        var_path = write_csv(
            self._out(f"classical_variance_mu{mu:.6e}_{self.hash}.csv"),
            {"N": dcl.periods, "variance": dcl.variance_series},
            self.hash,
            "classical ensemble variance of (H - E_center)/(hbar0*omega) vs N",
            extra_header=[
                f"mu: {mu:.17g}",
                f"D_classical: {dcl.d_classical:.17g}",
                f"std_error: {dcl.std_error:.17g}",
                f"ensemble_size: {dcl.ensemble_size}",
            ],
        )
        return [scan_path, var_path]

    # -- scan / fig5 --------------------------------------------------------

    def scan_point(self, mu: float, seed_offset: int = 0) -> dict:
        """Full quantum + classical pipeline at one coupling value."""
        cfg = self.config
        spec_probe = self.spectrum()
        k_auto = scan_k_halfwidth(spec_probe, cfg.n0, mu, cfg.k_halfwidth)
        basis = self.basis(mu=mu, k_halfwidth=k_auto)
        drive = self.drive(basis, mu=mu)
        op = self.operator(basis, drive, tag=f"scan_mu{mu:.6e}")
        window = cfg.fit_window
        n_max = max(3 * window[1] + 100, 1600)
        dq = separatrix_ensemble_diffusion(op, n_max=n_max, window=window)
        layer = self.layer(basis, drive, mu=mu)
        cp = self.classical_params(basis, drive, mu)
        dcl = classical_diffusion(
            cp,
            layer,
            period=drive.period,
            energy_unit=basis.hbar0 * basis.omega,
            ensemble_size=cfg.ensemble_size,
            n_periods=cfg.classical_periods,
            seed=cfg.seed + seed_offset,
        )
        return {
            "mu": mu,
            "inv_sqrt_mu": 1.0 / np.sqrt(mu),
            "D_quantum": dq["median"],
            "D_quantum_mean": dq["mean"],
            "D_classical": dcl.d_classical,
            "D_classical_se": dcl.std_error,
            "M_s": layer.m_s,
            "layer_width": layer.layer_width,
            "k_halfwidth": k_auto,
            "unitarity_defect": op.unitarity_defect,
        }

    def scan(self, mu_grid, resume: bool = True) -> dict:
        """Per-mu pipeline with manifest-based resume and partial-failure log."""
        cfg = self.config
        state_path = self._out(f"scan_state_{self.hash}.json")
        state = {"config_hash": self.hash, "points": {}}
        if resume and os.path.exists(state_path):
            with open(state_path) as fh:
                prior = json.load(fh)
            if prior.get("config_hash") == self.hash:
                state = prior
        failures = []
        for i, mu in enumerate(mu_grid):
            key = f"{mu:.12e}"
            if state["points"].get(key, {}).get("status") == "done":
                continue
            try:
                row = self.scan_point(mu, seed_offset=i)
                state["points"][key] = {"status": "done", "row": row}
            except QuarticResonanceError as exc:
                failures.append((mu, str(exc)))
                state["points"][key] = {"status": "failed", "error": str(exc)}
            os.makedirs(os.path.dirname(os.path.abspath(state_path)), exist_ok=True)
            with open(state_path, "w") as fh:
                json.dump(state, fh, indent=2, sort_keys=True)
        rows = [
            state["points"][f"{mu:.12e}"]["row"]
            for mu in mu_grid
            if state["points"].get(f"{mu:.12e}", {}).get("status") == "done"
        ]
        rows.sort(key=lambda r: r["mu"])
        trend_flag = bool(
            rows
            and all(
                rows[i + 1]["D_quantum"] >= rows[i]["D_quantum"]
                for i in range(len(rows) - 1)
            )
        )
        csv_path = write_csv(
            self._out(f"fig5_{self.hash}.csv"),
            {
                "mu": [r["mu"] for r in rows],
                "inv_sqrt_mu": [r["inv_sqrt_mu"] for r in rows],
                "D_quantum": [r["D_quantum"] for r in rows],
                "D_classical": [r["D_classical"] for r in rows],
                "M_s": [r["M_s"] for r in rows],
            },
            self.hash,
            "diffusion along the resonance vs coupling: quantum and classical",
            extra_header=[
                f"monotone_trend_in_mu: {int(trend_flag)}",
                f"failed_points: {len(failures)}",
            ],
        )
        return {
            "rows": rows,
            "failures": failures,
            "csv": csv_path,
            "state_path": state_path,
        }

    def figure(self, figure_id: str) -> list:
        cfg = self.config
        if figure_id == "fig1":
            return self.figure_fig1()
        if figure_id == "fig2":
            return self.figure_fig2()
        if figure_id == "fig3":
            # localization / delocalization pair at the paper couplings
            return self.figure_fig3(mu=3e-5 if cfg.hbar0 < 1e-4 else cfg.mu * 0.3) + \
                self.figure_fig3(mu=1e-4 if cfg.hbar0 < 1e-4 else cfg.mu)
        if figure_id == "fig4":
            return self.figure_fig4()
        if figure_id == "fig5":
            grid = DEFAULT_SCAN_GRID if cfg.hbar0 < 1e-4 else default_compact_grid(cfg)
            return [self.scan(grid)["csv"]]
        raise QuarticResonanceError(f"unknown figure id {figure_id!r}")


def _pendulum_omega(mu: float, basis) -> float:
    from .classical import coupling_pendulum

    return coupling_pendulum(mu, 0.5 * basis.e_center).omega_tilde


def scan_k_halfwidth(spec, n0: int, mu: float, k_cap: int) -> int:
    """k window sized to the coupling-resonance well: K ~ 1.25 * k_sep.

    k_sep = 2 x_{n0,n0+1} sqrt(mu / E'') is the separatrix half-width in
    the level offset k; the window keeps a margin of above-separatrix
    states.  A cap below ~1.1 k_sep would cut the well open, so that is
    rejected instead of silently clipped.
    """
    from .errors import ValidationError

    epp = anharmonicity(spec, n0)
    xbar = abs(spec.x_elements[n0, n0 + 1])
    k_sep = 2.0 * xbar * np.sqrt(mu / epp)
    if k_cap < 1.1 * k_sep:
        raise ValidationError(
            f"k_halfwidth cap {k_cap} cuts the resonance well open at "
            f"mu = {mu:.3g} (separatrix at k ~ {k_sep:.0f}); raise k_halfwidth"
        )
    return int(np.clip(np.ceil(1.25 * k_sep), 8, k_cap))


def default_compact_grid(cfg: RunConfig) -> tuple:
    """Reduced 3-point grid around the configured coupling."""
    return (0.5 * cfg.mu, 0.71 * cfg.mu, cfg.mu)


REDUCED_PAPER_GRID = (1e-4, 1.41e-4, 2e-4)


def reduced_scan_config(base: RunConfig) -> RunConfig:
    """Paper-geometry scan shrunk to finish within the half-hour clause.

    Keeps the published hbar0/n0 and the calibrated drive; trims the group
    window to q = -4..4, relaxes the step policy, and lets the k window
    auto-size up to the separatrix of the largest grid coupling.
    """
    return base.replace(
        q_halfwidth=4,
        k_halfwidth=85,
        phase_per_step=0.45,
        classical_periods=300,
        n_max=None,
    )
