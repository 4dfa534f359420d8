"""Write every figure dataset as CSV into one directory."""

import argparse
import warnings
from pathlib import Path

from memqkd.figures import FIGURES, write_figure


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="out/figures")
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for which in FIGURES:
            print(write_figure(which, Path(args.out), points=args.points, seed=args.seed))


if __name__ == "__main__":
    main()
