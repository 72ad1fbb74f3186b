"""Deterministic CSV emission.

Every file starts with a commented header block (schema description plus
the resolved config hash) so outputs are self-describing and diffable;
float formatting is repr-exact so identical runs produce identical bytes.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(
    path: str,
    columns: dict,
    config_hash: str,
    schema_note: str,
    extra_header: Sequence[str] = (),
) -> str:
    names = list(columns)
    rows = len(next(iter(columns.values()))) if names else 0
    for name in names:
        if len(columns[name]) != rows:
            raise ValueError(f"column {name} length mismatch")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    lines = [f"# {schema_note}", f"# config_hash: {config_hash}"]
    lines += [f"# {h}" for h in extra_header]
    lines.append(",".join(names))
    for i in range(rows):
        lines.append(",".join(format_value(columns[name][i]) for name in names))
    payload = "\n".join(lines) + "\n"
    tmp = path + ".tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(payload)
    os.replace(tmp, path)
    return path
