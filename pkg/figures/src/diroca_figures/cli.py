"""Command-line front end: render robustness curves from result CSVs."""

from __future__ import annotations

import argparse
import sys

from diroca_figures.figures import FigureSpec, plot_robustness


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="diroca-figures",
        description="Render error-vs-x robustness curves with sidecar data files.",
    )
    parser.add_argument(
        "inputs", nargs="+", metavar="LABEL=CSV",
        help="panel label and results CSV path, e.g. gaussian/slc=results.csv",
    )
    parser.add_argument("--x", required=True,
                        choices=["alpha", "sigma", "k", "n_misalign"])
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--sidecar-dir", default=None,
                        help="sidecar directory (default: alongside the image)")
    parser.add_argument("--methods", nargs="*", default=[],
                        help="restrict and order the plotted methods")
    parser.add_argument(
        "--where", nargs="*", default=[], metavar="COL=VALUE",
        help="fix result columns, e.g. sigma=5",
    )
    args = parser.parse_args(argv)

    try:
        inputs = tuple(tuple(item.split("=", 1)) for item in args.inputs)
        if any(len(pair) != 2 for pair in inputs):
            raise ValueError("inputs must look like LABEL=CSV")
        where = tuple(
            (col, float(val)) for col, val in (item.split("=", 1)
                                               for item in args.where)
        )
        spec = FigureSpec(
            inputs=inputs, x=args.x, output=args.out,
            sidecar_dir=args.sidecar_dir or str(args.out) + ".sidecars",
            methods=tuple(args.methods), where=where,
        )
        image, sidecars = plot_robustness(spec)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(image)
    for path in sidecars.values():
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
