"""Shared plumbing for the figure scripts.

Each script consumes only the documented CSV schemas written by the solver
CLI (fields.csv / sigma.csv / history.csv / fields2d.csv) and never touches
solver internals, so the two packages evolve independently.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")


FIGURE_KINDS = ("coeff_overlay", "convergence", "heatmap")


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple[Path, ...]
    output: Path
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}")
        for p in self.inputs:
            if not Path(p).exists():
                raise FileNotFoundError(f"figure input missing: {p}")


class SchemaError(RuntimeError):
    pass


def read_csv(path: Path, required: tuple[str, ...]):
    """Header-checked CSV reader; raises SchemaError naming the first
    missing column."""
    import numpy as np

    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    header = [h.strip() for h in header]
    for col in required:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r} "
                              f"(found {header})")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise SchemaError(f"{path}: no data rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def save_figure(fig, output: Path) -> Path:
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    tmp = output.with_suffix(output.suffix + ".part")
    fig.savefig(tmp, dpi=150, bbox_inches="tight",
                format=output.suffix.lstrip(".") or "png")
    tmp.replace(output)          # no partial file on failure
    return output
