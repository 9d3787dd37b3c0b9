"""CLI: otplots render --in <dir> --out <dir> [--times 0.2,0.5,0.8] [--dpi 150]."""

from __future__ import annotations

import argparse
import sys

from .render import FigureSpec, RenderError, render_run


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="otplots")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render the figure set from a run directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--times", default="0.2,0.5,0.8")
    p.add_argument("--dpi", type=int, default=150)
    p.add_argument("--bounds", choices=["shared", "per-frame"], default="shared")
    p.add_argument("--stride", type=int, default=20)
    args = parser.parse_args(argv)

    try:
        times = tuple(float(t) for t in args.times.split(","))
        spec = FigureSpec(in_dir=args.in_dir, times=times, dpi=args.dpi,
                          bounds_mode=args.bounds, evolution_stride=args.stride)
        written = render_run(spec, args.out_dir)
    except (RenderError, ValueError) as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
