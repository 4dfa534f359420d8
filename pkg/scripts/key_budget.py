"""Secret-key accounting at the reported operating point under each reading.

Prints the asymptotic rate, both log bases and both placements of the
finite-key correction, and the QBER thresholds.
"""

from memqkd import pamp
from memqkd.physchan import TIMING_PRESETS, ChannelParams, sifted_rate_model


def main():
    e_z, e_y, f_r, n = 0.0786, 0.0912, 1.16, 3080
    print(f"r_sec (asymptotic)        {pamp.asymptotic_secret_rate(0.5, 0.5, e_z, e_y, f_r):.5f}")
    for base in ("log2", "ln"):
        b = pamp.KeyBudget(n // 2, n // 2, e_z, e_y, f_r, log_base=base)
        print(f"{base:<5} r_finite per-bit      {b.r_finite:+.5f}  (n_sec_finite {b.n_sec_finite})")
        print(f"{base:<5} r_finite raw          {b.r_finite_raw:+.5f}")
    print(f"threshold, symmetric      {pamp.qber_threshold(f_r):.5f}")
    print(f"threshold, z fixed        {pamp.qber_threshold(f_r, e_fixed=e_z):.5f}")
    print(f"threshold, f_r = 1        {pamp.qber_threshold(1.0):.5f}")
    per_use = sifted_rate_model(ChannelParams(), TIMING_PRESETS["current"])[1]
    r = pamp.asymptotic_secret_rate(0.5, 0.5, e_z, e_y, f_r)
    print(f"secret bits per use       {pamp.secret_bits_per_use(per_use, r):.4e}")


if __name__ == "__main__":
    main()
