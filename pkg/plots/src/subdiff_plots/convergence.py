"""Levenberg-Marquardt convergence curves from history.csv files:
log-scale residual plus whichever relative-error columns are present."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import matplotlib.pyplot as plt

from .figspec import FigureSpec, SchemaError, read_csv, save_figure


def render(spec: FigureSpec) -> Path:
    data = read_csv(spec.inputs[0], ("iter", "residual"))
    err_cols = [c for c in data if c.startswith("e_")
                and not np.all(np.isnan(data[c]))]
    fig, axes = plt.subplots(1, 1 + len(err_cols),
                             figsize=(4.5 * (1 + len(err_cols)), 3.4))
    axes = np.atleast_1d(axes)
    axes[0].semilogy(data["iter"], data["residual"], "o-")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("residual")
    for ax, col in zip(axes[1:], err_cols):
        ax.semilogy(data["iter"], data[col], "s-")
        ax.set_xlabel("iteration")
        ax.set_ylabel(col)
    fig.tight_layout()
    return save_figure(fig, spec.output)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--in", dest="inputs", required=True,
                    help="history.csv from a completed run")
    ap.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec(kind="convergence", inputs=(Path(args.inputs),),
                          output=Path(args.out))
        out = render(spec)
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
