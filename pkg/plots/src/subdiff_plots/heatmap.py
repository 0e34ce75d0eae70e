"""Heatmaps of the cylinder-source reconstruction: truth, estimate, and
pointwise error from a fields2d.csv (x1,x2,f_truth,f_hat)."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import matplotlib.pyplot as plt

from .figspec import FigureSpec, SchemaError, read_csv, save_figure


def render(spec: FigureSpec) -> Path:
    data = read_csv(spec.inputs[0], ("x1", "x2", "f_truth", "f_hat"))
    x1 = np.unique(data["x1"])
    x2 = np.unique(data["x2"])
    shape = (x1.size, x2.size)
    if shape[0] * shape[1] != data["x1"].size:
        raise SchemaError(f"{spec.inputs[0]}: rows do not tile a grid")
    truth = data["f_truth"].reshape(shape)
    est = data["f_hat"].reshape(shape)
    fig, axes = plt.subplots(1, 3, figsize=(12.5, 3.4))
    panels = [("truth", truth), ("recovered", est),
              ("pointwise error", est - truth)]
    for ax, (title, grid) in zip(axes, panels):
        im = ax.imshow(grid.T, origin="lower", aspect="auto",
                       extent=[x1[0], x1[-1], x2[0], x2[-1]])
        ax.set_title(title)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    return save_figure(fig, spec.output)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--in", dest="inputs", required=True,
                    help="fields2d.csv from a completed 2D run")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec(kind="heatmap", inputs=(Path(args.inputs),),
                          output=Path(args.out))
        out = render(spec)
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
