"""fedviz: render figures from exported run directories.

    fedviz plot accuracy_curves RUN_DIR [RUN_DIR ...] -o accuracy.png
    fedviz plot comm_volume     RUN_DIR [RUN_DIR ...] -o volume.png
"""

from __future__ import annotations

import argparse
import sys

from .plots import FigureSpec, PlotDataError, plot_accuracy, plot_comm


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedviz", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    plot = sub.add_parser("plot", help="draw a figure from run directories")
    plot.add_argument("kind", choices=["accuracy_curves", "comm_volume"])
    plot.add_argument("run_dirs", nargs="+", metavar="run-dir")
    plot.add_argument("-o", "--output", required=True, help="image file to write")
    plot.add_argument("--labels", help="comma-separated legend labels, one per run dir")

    args = parser.parse_args(argv)
    labels = tuple(args.labels.split(",")) if args.labels else None
    try:
        spec = FigureSpec(input_dirs=tuple(args.run_dirs), kind=args.kind,
                          output=args.output, labels=labels)
        render = plot_accuracy if args.kind == "accuracy_curves" else plot_comm
        render(spec)
    except PlotDataError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
