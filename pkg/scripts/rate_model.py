"""Sifted key rate of the timing presets across channel loss."""

import argparse

from memqkd.physchan import TIMING_PRESETS, ChannelParams, sifted_rate_model


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--losses", type=float, nargs="+", default=[0, 10, 20, 26, 30, 40])
    args = p.parse_args()
    print("loss_db  " + "  ".join(f"{k:>10s}" for k in TIMING_PRESETS) + "  bits_per_use")
    for loss in args.losses:
        ch = ChannelParams(loss_db=loss)
        rates = [sifted_rate_model(ch, t)[0] for t in TIMING_PRESETS.values()]
        per_use = sifted_rate_model(ch, TIMING_PRESETS["current"])[1]
        print(f"{loss:<8g} " + "  ".join(f"{r:10.3f}" for r in rates) + f"  {per_use:.4e}")
    ch = ChannelParams()
    base = sifted_rate_model(ch, TIMING_PRESETS["current"])[0]
    for k, t in TIMING_PRESETS.items():
        print(f"{k:<10s} speed-up at 26 dB: {sifted_rate_model(ch, t)[0] / base:.2f}x")


if __name__ == "__main__":
    main()
