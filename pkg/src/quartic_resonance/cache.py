"""Versioned binary cache for expensive intermediates.

Containers are .npz files carrying the payload arrays, a JSON metadata
string, a format version, and a sha256 checksum over the array bytes;
loading verifies the checksum and raises CacheCorruptionError on
mismatch so callers can recompute with a warning.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Optional

import numpy as np

from .errors import CacheCorruptionError

FORMAT_VERSION = 1


def _payload_checksum(arrays: dict) -> str:
    h = hashlib.sha256()
    for key in sorted(arrays):
        h.update(key.encode())
        arr = np.ascontiguousarray(arrays[key])
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save_container(path: str, arrays: dict, meta: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    record = {
        "format_version": FORMAT_VERSION,
        "checksum": _payload_checksum(arrays),
        "meta": meta,
    }
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(record).encode(), dtype=np.uint8),
                 **arrays)
    os.replace(tmp, path)


def load_container(path: str) -> tuple[dict, dict]:
    """Returns (arrays, meta); raises CacheCorruptionError on any damage."""
    try:
        with np.load(path) as data:
            raw = bytes(data["__meta__"].tobytes())
            record = json.loads(raw.decode())
            arrays = {k: data[k] for k in data.files if k != "__meta__"}
    except CacheCorruptionError:
        raise
    except Exception as exc:
        raise CacheCorruptionError(f"unreadable cache file {path}: {exc}") from exc
    if record.get("format_version") != FORMAT_VERSION:
        raise CacheCorruptionError(
            f"cache format {record.get('format_version')} != {FORMAT_VERSION}"
        )
    if _payload_checksum(arrays) != record["checksum"]:
        raise CacheCorruptionError(f"checksum mismatch in {path}")
    return arrays, record["meta"]


def cache_path(cache_dir: str, stage: str, key: str) -> str:
    return os.path.join(cache_dir, f"{stage}_{key}.npz")


def file_sha256(path: str, chunk: int = 1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while True:
            block = fh.read(chunk)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def spectrum_key(hbar0: float, n_max: int, margin: float, ppw: float, method: str) -> str:
    blob = json.dumps(
        [repr(hbar0), n_max, repr(margin), repr(ppw), method], separators=(",", ":")
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_spectrum(path: str, spec, include_wavefunctions: bool = False) -> None:
    arrays = {
        "energies": spec.energies,
        "x_elements": spec.x_elements,
        "grid": spec.grid,
    }
    if include_wavefunctions and spec.wavefunctions is not None:
        arrays["wavefunctions"] = spec.wavefunctions
    meta = {
        "hbar0": spec.hbar0,
        "method": spec.method,
        "convergence_defect": spec.convergence_defect,
        "params": {
            "hbar0": spec.params.hbar0,
            "n_max": spec.params.n_max,
            "grid_box_halfwidth": spec.params.grid_box_halfwidth,
            "grid_points": spec.params.grid_points,
        },
    }
    save_container(path, arrays, meta)


def load_spectrum(path: str):
    from .oscillator import OscillatorParams, OscillatorSpectrum

    arrays, meta = load_container(path)
    params = OscillatorParams(**meta["params"])
    return OscillatorSpectrum(
        hbar0=meta["hbar0"],
        energies=arrays["energies"],
        x_elements=arrays["x_elements"],
        grid=arrays["grid"],
        params=params,
        method=meta["method"],
        convergence_defect=meta["convergence_defect"],
        wavefunctions=arrays.get("wavefunctions"),
    )


def save_operator(path: str, op, config_hash: str) -> None:
    arrays = {
        "matrix": op.matrix,
        "quasienergies": op.quasienergies,
        "eigenvectors": op.eigenvectors,
        "eigenvalue_moduli": op.eigenvalue_moduli,
    }
    meta = {
        "config_hash": config_hash,
        "unitarity_defect": op.unitarity_defect,
        "edge_leak": op.edge_leak,
        "n_steps": op.n_steps,
    }
    save_container(path, arrays, meta)


def load_operator(path: str, basis, drive) -> Optional[object]:
    from .floquet import FloquetOperator

    arrays, meta = load_container(path)
    return FloquetOperator(
        basis=basis,
        drive=drive,
        matrix=arrays["matrix"],
        quasienergies=arrays["quasienergies"],
        eigenvectors=arrays["eigenvectors"],
        eigenvalue_moduli=arrays["eigenvalue_moduli"],
        unitarity_defect=meta["unitarity_defect"],
        edge_leak=meta["edge_leak"],
        n_steps=meta["n_steps"],
    )


def basis_key(hbar0: float, params) -> str:
    blob = json.dumps(
        [
            repr(hbar0), repr(params.mu), params.n0,
            params.k_halfwidth, params.q_halfwidth, params.parity_sector,
            params.separatrix_window, repr(params.doublet_ratio),
        ],
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_basis(path: str, basis) -> None:
    """Resonance-basis container: group spectra, classification, drive blocks."""
    arrays = {
        "levels": np.stack([g.levels for g in basis.groups]),
        "eigenvectors": np.stack([g.eigenvectors for g in basis.groups]),
        "shifts": np.array([g.shift for g in basis.groups]),
        "qs": np.array([g.q for g in basis.groups]),
        "separatrix_index": np.array([g.separatrix_index for g in basis.groups]),
        "blocks": np.stack(basis.transitions.blocks)
        if basis.transitions.blocks
        else np.empty((0, basis.group_size, basis.group_size)),
        "block_qs": np.array(basis.transitions.qs, dtype=int),
    }
    for i, g in enumerate(basis.groups):
        arrays[f"inside_{i}"] = np.asarray(g.inside_set, dtype=int)
        arrays[f"sep_{i}"] = np.asarray(g.separatrix_set, dtype=int)
        arrays[f"above_{i}"] = np.asarray(g.above_set, dtype=int)
        arrays[f"doublets_{i}"] = np.array(
            [(a, b, s) for a, b, s in g.doublets], dtype=float
        ).reshape(-1, 3)
    meta = {
        "hbar0": basis.hbar0,
        "omega": basis.omega,
        "epp": basis.epp,
        "e_center": basis.e_center,
        "params": {
            "mu": basis.params.mu,
            "n0": basis.params.n0,
            "k_halfwidth": basis.params.k_halfwidth,
            "q_halfwidth": basis.params.q_halfwidth,
            "parity_sector": basis.params.parity_sector,
            "separatrix_window": basis.params.separatrix_window,
            "doublet_ratio": basis.params.doublet_ratio,
        },
    }
    save_container(path, arrays, meta)


def load_basis(path: str):
    from .resonance import (
        GroupSpectrum,
        ResonanceBasis,
        ResonanceParams,
        TransitionMatrix,
    )

    arrays, meta = load_container(path)
    params = ResonanceParams(**meta["params"])
    groups = []
    for i, q in enumerate(arrays["qs"]):
        doublets = [
            (int(a), int(b), float(s)) for a, b, s in arrays[f"doublets_{i}"]
        ]
        groups.append(
            GroupSpectrum(
                q=int(q),
                levels=arrays["levels"][i],
                eigenvectors=arrays["eigenvectors"][i],
                shift=float(arrays["shifts"][i]),
                inside_set=arrays[f"inside_{i}"],
                separatrix_set=arrays[f"sep_{i}"],
                above_set=arrays[f"above_{i}"],
                separatrix_index=int(arrays["separatrix_index"][i]),
                doublets=doublets,
            )
        )
    transitions = TransitionMatrix(
        qs=[int(q) for q in arrays["block_qs"]],
        blocks=[arrays["blocks"][i] for i in range(arrays["blocks"].shape[0])],
    )
    return ResonanceBasis(
        params=params,
        hbar0=meta["hbar0"],
        omega=meta["omega"],
        epp=meta["epp"],
        e_center=meta["e_center"],
        groups=groups,
        transitions=transitions,
    )
