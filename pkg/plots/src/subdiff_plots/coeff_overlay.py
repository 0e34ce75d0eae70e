"""Overlay of true and recovered coefficient/source profiles.

Inputs are one or more fields.csv files (x,b_truth,b_hat,... columns) from
completed runs, typically one per noise level; optional sigma.csv rows draw
the recovered strength alongside.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import matplotlib.pyplot as plt

from .figspec import FigureSpec, SchemaError, read_csv, save_figure


def render(spec: FigureSpec) -> Path:
    fields = [read_csv(p, ("x",)) for p in spec.inputs]
    cols = [c for c in ("b", "q", "f") if f"{c}_hat" in fields[0]]
    if not cols:
        raise SchemaError(f"{spec.inputs[0]}: no *_hat columns to draw")
    fig, axes = plt.subplots(1, len(cols), figsize=(5.0 * len(cols), 3.6))
    if len(cols) == 1:
        axes = [axes]
    labels = spec.labels or tuple(p.parent.name for p in spec.inputs)
    for ax, name in zip(axes, cols):
        ax.plot(fields[0]["x"], fields[0][f"{name}_truth"], "k-", lw=2,
                label="truth")
        for data, lab in zip(fields, labels):
            ax.plot(data["x"], data[f"{name}_hat"], "--", lw=1.2,
                    label=f"recovered ({lab})")
        ax.set_xlabel("x")
        ax.set_ylabel(name)
        ax.legend(fontsize=8)
    fig.tight_layout()
    return save_figure(fig, spec.output)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--in", dest="inputs", nargs="+", required=True,
                    help="fields.csv paths (one per noise level)")
    ap.add_argument("--out", required=True)
    ap.add_argument("--labels", nargs="*", default=None)
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec(kind="coeff_overlay",
                          inputs=tuple(Path(p) for p in args.inputs),
                          output=Path(args.out),
                          labels=tuple(args.labels or ()))
        out = render(spec)
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
