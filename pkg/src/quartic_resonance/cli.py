"""Command-line front end.

Subcommands: spectrum | resonance | floquet | evolve | classical | figure
| scan.  Flags mirror RunConfig fields and may be supplied wholesale from
a JSON config file.  Exit codes: 0 success, 1 validation error,
2 numerical failure, 3 partial scan failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import RunConfig, from_dict, load_config_file
from .errors import NumericalError, ValidationError
from .pipeline import DEFAULT_SCAN_GRID, Pipeline, RunManifest, default_compact_grid

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_PARTIAL = 3

_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with RunConfig fields")
    for name, f in _CONFIG_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if f.type in ("float", float):
            parser.add_argument(flag, type=float, default=None)
        elif f.type in ("int", int):
            parser.add_argument(flag, type=int, default=None)
        elif name == "fit_window":
            parser.add_argument(flag, type=str, default=None,
                                help="two comma-separated period counts")
        elif name in ("n_max", "n_steps_override"):
            parser.add_argument(flag, type=int, default=None)
        else:
            parser.add_argument(flag, type=str, default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = load_config_file(args.config) if args.config else RunConfig()
    overrides = {}
    for name in _CONFIG_FIELDS:
        val = getattr(args, name, None)
        if val is None:
            continue
        if name == "fit_window":
            parts = [int(p) for p in str(val).split(",")]
            if len(parts) != 2:
                raise ValidationError("--fit-window expects 'start,end'")
            val = tuple(parts)
        overrides[name] = val
    if overrides:
        d = cfg.to_dict()
        d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in overrides.items()})
        cfg = from_dict(d)
    cfg.validate()
    return cfg


def _manifest(pipe: Pipeline, command: str, files: list) -> str:
    man = RunManifest(config_hash=pipe.hash, command=command)
    for f in files:
        man.add(f)
    return man.write(pipe._out(f"manifest_{command}_{pipe.hash}.json"))


def cmd_spectrum(pipe: Pipeline, args) -> int:
    print(pipe.spectrum_summary())
    return EXIT_OK


def cmd_resonance(pipe: Pipeline, args) -> int:
    files = pipe.figure_fig1() + pipe.figure_fig2()
    _manifest(pipe, "resonance", files)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_floquet(pipe: Pipeline, args) -> int:
    files = pipe.figure_fig3(mu=pipe.config.mu)
    _manifest(pipe, "floquet", files)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_evolve(pipe: Pipeline, args) -> int:
    files = pipe.figure_fig4()
    _manifest(pipe, "evolve", files)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_classical(pipe: Pipeline, args) -> int:
    files = pipe.classical_command()
    _manifest(pipe, "classical", files)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_figure(pipe: Pipeline, args) -> int:
    files = pipe.figure(args.id)
    _manifest(pipe, f"figure_{args.id}", files)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_scan(pipe: Pipeline, args) -> int:
    if args.mu_grid:
        grid = tuple(float(x) for x in args.mu_grid.split(","))
    elif pipe.config.hbar0 < 1e-4:
        grid = DEFAULT_SCAN_GRID
    else:
        grid = default_compact_grid(pipe.config)
    if not grid:
        raise ValidationError("empty mu grid")
    result = pipe.scan(grid, resume=not args.no_resume)
    files = [result["csv"]]
    _manifest(pipe, "scan", files)
    print(result["csv"])
    for mu, err in result["failures"]:
        print(f"FAILED mu={mu:.6g}: {err}", file=sys.stderr)
    if result["failures"]:
        return EXIT_PARTIAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quartic-resonance",
        description="Coupled quartic oscillators under two-frequency driving: "
        "resonance-group spectra, one-period propagator, packet spreading, "
        "and the classical reference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "spectrum": cmd_spectrum,
        "resonance": cmd_resonance,
        "floquet": cmd_floquet,
        "evolve": cmd_evolve,
        "classical": cmd_classical,
        "figure": cmd_figure,
        "scan": cmd_scan,
    }
    for name, fn in specs.items():
        p = sub.add_parser(name)
        _add_config_flags(p)
        if name == "figure":
            p.add_argument("--id", required=True,
                           choices=["fig1", "fig2", "fig3", "fig4", "fig5"])
        if name == "scan":
            p.add_argument("--mu-grid", help="comma-separated mu values")
            p.add_argument("--no-resume", action="store_true")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        pipe = Pipeline(cfg)
        return args.func(pipe, args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
