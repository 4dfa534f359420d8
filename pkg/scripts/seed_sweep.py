"""Run the default session over many physics seeds and summarise the spread.

    python3 scripts/seed_sweep.py --seeds 60 --out out/seed_sweep.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from memqkd.peers.frames import ProtocolError
from memqkd.peers.session import SessionConfig, run_session


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=60)
    p.add_argument("--out", default="out/seed_sweep.csv")
    args = p.parse_args()
    rows = []
    for seed in range(args.seeds):
        try:
            r = run_session(SessionConfig(seed=seed))
        except ProtocolError as exc:
            rows.append({"seed": seed, "status": exc.kind})
            continue
        b = r.budget
        rows.append({"seed": seed, "status": "OK", "qber": r.qber_total, "qber_z": r.qber_z, "qber_y": r.qber_y,
                     "f_r": r.alice.report.f_r, "n_sec": b.n_sec, "n_rand": r.certificate.n_rand,
                     "n_key": r.n_key, "keys_match": r.keys_match})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for r in rows for k in r}, key=lambda k: list(rows[0]).index(k) if k in rows[0] else 99)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    ok = [r for r in rows if r["status"] == "OK"]
    q = np.array([r["qber"] for r in ok])
    f = np.array([r["f_r"] for r in ok])
    n = np.array([r["n_key"] for r in ok])
    print(f"{len(ok)}/{len(rows)} sessions completed")
    print(f"QBER  {q.min():.4f} .. {q.max():.4f}  mean {q.mean():.4f}")
    print(f"f_r   mean {f.mean():.3f}  above 1.25: {np.sum(f > 1.25)}")
    print(f"n_key mean {n.mean():.1f}  below 256: {np.sum(n < 256)}")


if __name__ == "__main__":
    main()
