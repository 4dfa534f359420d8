"""Cascade leakage efficiency and residual-error rate versus key size and QBER.

    python3 scripts/cascade_efficiency.py --trials 50
"""

import argparse

import numpy as np

from memqkd.recon import cascade_local


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--passes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    print("n      e      f_r_mean  f_r_sd  residual")
    for n in (1024, 3080, 4096, 16384):
        for e in (0.02, 0.05, 0.083, 0.11):
            fs, bad = [], 0
            for t in range(args.trials):
                a = rng.integers(0, 2, n).astype(np.uint8)
                b = a ^ (rng.random(n) < e).astype(np.uint8)
                out, rep = cascade_local(a, b, e, args.passes, seed=t.to_bytes(4, "big"))
                bad += not np.array_equal(out, a)
                if rep.f_r is not None:
                    fs.append(rep.f_r)
            print(f"{n:<6d} {e:<6.3f} {np.mean(fs):<9.4f} {np.std(fs):<7.4f} {bad}/{args.trials}")


if __name__ == "__main__":
    main()
