"""Command line: plots trajectory|compare|mae-box --in ... --out figure.(png|svg)."""

import argparse
import sys

from .figures import PlotSpec, plot_mae_boxes, plot_trajectories


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render figures from panelmix CSV outputs"
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind, blurb in (
        ("trajectory", "per-pair association trajectories with 95% bands"),
        ("compare", "overlay two or more subpopulation trajectory files"),
        ("mae-box", "grouped log-MAE boxplots by time point"),
    ):
        p = sub.add_parser(kind, help=blurb)
        p.add_argument("--in", dest="inputs", action="append", required=True,
                       help="input CSV (repeatable; mae-box also accepts a,b,c lists)")
        p.add_argument("--out", required=True, help="output image (.png or .svg)")
        p.add_argument("--pairs", default="", help="comma-separated pair filter")
        p.add_argument("--label", dest="labels", action="append", default=None,
                       help="legend label per input (repeatable)")
        p.add_argument("--echo", default="", help="write consumed rows back to this CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = PlotSpec(
        inputs=args.inputs,
        kind=args.kind,
        out=args.out,
        pairs=[p for p in args.pairs.split(",") if p],
        labels=args.labels or [],
        echo=args.echo,
    )
    try:
        if args.kind == "mae-box":
            out = plot_mae_boxes(spec)
        else:
            out = plot_trajectories(spec)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
