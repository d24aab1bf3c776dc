"""Command line: figures <kind> --in <dir> --out <dir> [--format png|svg]."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .inputs import SchemaError
from .render import KINDS, FigureJob, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="figures",
        description="render figures from contagion-lab simulation outputs",
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--in", dest="input_dir", required=True,
                        help="directory with the simulation outputs")
    parser.add_argument("--out", dest="out_dir", required=True)
    parser.add_argument("--format", dest="fmt", choices=("png", "svg"), default="png")
    parser.add_argument("--dpi", type=int, default=150)
    parser.add_argument("--colormap", default="viridis")
    args = parser.parse_args(argv)
    job = FigureJob(input_dir=Path(args.input_dir), kind=args.kind,
                    out_dir=Path(args.out_dir), fmt=args.fmt, dpi=args.dpi,
                    colormap=args.colormap)
    try:
        paths = render(job)
    except SchemaError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
