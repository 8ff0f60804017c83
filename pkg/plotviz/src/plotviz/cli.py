"""Command line wrapper: plot <kind> --in <csv...> --out <png>."""

from __future__ import annotations

import argparse
import sys

from . import formats, render


def build_parser():
    ap = argparse.ArgumentParser(prog="plot",
                                 description="Render figures from solver CSV artifacts")
    ap.add_argument("kind", choices=render.KINDS)
    ap.add_argument("--in", dest="inputs", nargs="+", required=True,
                    help="input CSV file(s)")
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--log-value", action="store_true",
                    help="log10 color scale for snapshot grids")
    ap.add_argument("--title", default="")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = render.PlotSpec(kind=args.kind, inputs=tuple(args.inputs),
                               output=args.out, log_value=args.log_value,
                               title=args.title)
        render.render(spec)
    except formats.SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
