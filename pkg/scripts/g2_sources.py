"""HBT analysis of the three simulated sources at full measurement statistics."""

import argparse
import warnings

import numpy as np

from memqkd import photstat as ps


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--pulses", type=float, default=3e7)
    p.add_argument("--efficiency", type=float, default=0.01)
    p.add_argument("--dark", type=float, default=5.0, help="dark rate per detector, Hz")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    for src in ps.SOURCES:
        a, b = ps.simulate_hbt(src, 17e3, args.pulses / 17e3, rng, args.dark, args.dark, args.efficiency)
        raw = ps.correlate(a, b, 200.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cor = ps.noise_correct(raw, args.dark, args.dark, max(a.rate_hz - args.dark, 0), max(b.rate_hz - args.dark, 0))
        print(f"{src:<14s} raw {raw.g2_zero:.3f}+-{raw.g2_zero_sigma:.3f}  corrected {cor.g2_zero:.3f}+-{cor.g2_zero_sigma:.3f}"
              f"  reference {ps.expected_g2(src, args.efficiency):.3f}")


if __name__ == "__main__":
    main()
