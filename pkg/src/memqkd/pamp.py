"""Secret-key length accounting and subset-parity privacy amplification.

Asymptotic length for sifted counts n_z, n_y with error rates e_z, e_y:

    n_sec = sum_i n_i * [1 - f_r H(e_i) - H(e_other)]

The finite version replaces the phase-error term by a Serfling upper bound
e_max and subtracts log(2 / (eps_ec eps_sec^2)) bits from the key.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .recon import binary_entropy

LOGS = {"log2": math.log2, "ln": math.log}
DEFAULT_LOG = "ln"
EPS_SEC = 0.015
EPS_EC = 0.015


def _log(base: str):
    try:
        return LOGS[base]
    except KeyError:
        raise ValueError(f"log base must be one of {sorted(LOGS)}, got {base!r}") from None


def _check_rates(*rates):
    for e in rates:
        if not 0.0 <= e < 0.5:
            raise ValueError(f"error rate {e} outside [0, 0.5)")


def asymptotic_secret_rate(r_z: float, r_y: float, e_z: float, e_y: float, f_r: float) -> float:
    _check_rates(e_z, e_y)
    if f_r < 1.0:
        raise ValueError("f_r must be at least 1")
    hz, hy = binary_entropy(e_z), binary_entropy(e_y)
    return r_z * (1.0 - f_r * hz - hy) + r_y * (1.0 - f_r * hy - hz)


def asymptotic_secret_length(n_z: int, n_y: int, e_z: float, e_y: float, f_r: float) -> int:
    """Lower bound on the secret length; negative means no key."""
    return math.floor(asymptotic_secret_rate(n_z, n_y, e_z, e_y, f_r) + 1e-9)


def qber_threshold(f_r: float, e_fixed: float | None = None) -> float:
    """QBER at which the asymptotic rate vanishes (equal basis split).

    Without ``e_fixed`` both bases share one error rate and the root of
    1 - f_r H(e) - H(e) is returned.  With ``e_fixed`` one basis stays at
    that value while the other degrades; the mean QBER of the two at the
    root is returned.
    """
    if f_r < 1.0:
        raise ValueError("f_r must be at least 1")
    if e_fixed is None:
        f = lambda e: 1.0 - f_r * binary_entropy(e) - binary_entropy(e)
        return brentq(f, 1e-12, 0.5 - 1e-12, xtol=1e-10)
    _check_rates(e_fixed)
    g = lambda e: asymptotic_secret_rate(0.5, 0.5, e_fixed, e, f_r)
    if g(1e-12) <= 0:
        raise ValueError(f"no key even with a perfect second basis at e_fixed={e_fixed}")
    e_var = brentq(g, 1e-12, 0.5 - 1e-12, xtol=1e-10)
    return 0.5 * (e_fixed + e_var)


def serfling_emax(e: float, n_zy: int, n_other: int, eps_sec: float, log_base: str = DEFAULT_LOG) -> float:
    """Upper bound on the unobserved error rate, capped at 1/2."""
    if n_zy <= 0 or n_other <= 0:
        raise ValueError("counts must be positive")
    if not 0.0 < eps_sec <= 1.0:
        raise ValueError("eps_sec must lie in (0, 1]")
    dev = math.sqrt((n_zy + 1) * _log(log_base)(1.0 / eps_sec) / (2.0 * n_zy * (n_zy + n_other)))
    return min(0.5, e + dev)


def finite_correction_bits(eps_sec: float, eps_ec: float, log_base: str = DEFAULT_LOG) -> float:
    return _log(log_base)(2.0 / (eps_ec * eps_sec**2))


@dataclass
class KeyBudget:
    """Everything that fixes the final key length of one session.

    ``length_policy`` selects the secret length that caps ``n_key``:
    "finite" uses n_sec_finite, "asymptotic" uses n_sec.
    """

    n_z: int
    n_y: int
    e_z: float
    e_y: float
    f_r: float
    eps_sec: float = EPS_SEC
    eps_ec: float = EPS_EC
    n_rand: int = 0
    log_base: str = DEFAULT_LOG
    length_policy: str = "finite"
    n: int = 0
    n_sec: int = 0
    n_sec_finite: int = 0
    r_sec: float = 0.0
    r_finite: float = 0.0
    r_finite_raw: float = 0.0
    n_key: int = 0

    def __post_init__(self):
        if self.n_z < 0 or self.n_y < 0 or self.n_z + self.n_y == 0:
            raise ValueError("need a non-empty sifted key")
        _check_rates(self.e_z, self.e_y)
        for eps in (self.eps_sec, self.eps_ec):
            if not 0.0 < eps < 1.0:
                raise ValueError("eps_sec and eps_ec must lie in (0, 1)")
        if self.length_policy not in ("finite", "asymptotic"):
            raise ValueError(f"unknown length policy {self.length_policy!r}")
        _log(self.log_base)
        self.n = self.n_z + self.n_y
        self.n_sec = asymptotic_secret_length(self.n_z, self.n_y, self.e_z, self.e_y, self.f_r)
        self.r_sec = asymptotic_secret_rate(self.n_z / self.n, self.n_y / self.n, self.e_z, self.e_y, self.f_r)
        self.r_finite = finite_secret_rate(self)
        self.r_finite_raw = finite_secret_rate(self, correction="raw")
        self.n_sec_finite = math.floor(self.r_finite * self.n + 1e-9)
        cap = self.n_sec_finite if self.length_policy == "finite" else self.n_sec
        self.n_key = final_key_length(cap, self.n_rand)

    @property
    def eps(self) -> float:
        return self.eps_sec + self.eps_ec

    def to_json(self) -> dict:
        d = asdict(self)
        d["eps"] = self.eps
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def finite_secret_rate(budget: KeyBudget, correction: str = "per_bit") -> float:
    """Finite-key rate.

    ``correction="per_bit"`` divides the log correction by n so it lives on
    the rate scale; ``"raw"`` subtracts it from the rate as written.
    """
    b = budget
    n = b.n_z + b.n_y
    parts = 0.0
    for n_i, e_i, n_o, e_o in ((b.n_z, b.e_z, b.n_y, b.e_y), (b.n_y, b.e_y, b.n_z, b.e_z)):
        if n_i == 0:
            continue
        e_max = serfling_emax(e_o, n_o, n_i, b.eps_sec, b.log_base) if n_o else 0.5
        parts += n_i / n * (1.0 - b.f_r * binary_entropy(e_i) - binary_entropy(e_max))
    corr = finite_correction_bits(b.eps_sec, b.eps_ec, b.log_base)
    if correction == "per_bit":
        return parts - corr / n
    if correction == "raw":
        return parts - corr
    raise ValueError(f"unknown correction reading {correction!r}")


def final_key_length(n_sec: int, n_rand: int) -> int:
    return max(0, min(int(n_sec), int(n_rand)))


def secret_bits_per_use(sifted_bits_per_use: float, r_sec: float) -> float:
    return sifted_bits_per_use * max(r_sec, 0.0)


def subset_matrix(seed: bytes, n: int, out_len: int) -> np.ndarray:
    """Membership matrix (out_len x n); each entry is 1 with probability 1/2."""
    if out_len == 0 or n == 0:
        return np.zeros((out_len, n), dtype=np.uint8)
    stream = hashlib.shake_256(b"memqkd-pa|" + n.to_bytes(4, "big") + seed).digest(-(-out_len * n // 8))
    bits = np.unpackbits(np.frombuffer(stream, dtype=np.uint8))[: out_len * n]
    return bits.reshape(out_len, n)


def parities(matrix: np.ndarray, key) -> np.ndarray:
    """Parity of ``key`` restricted to each row of a membership matrix."""
    key = np.asarray(key, dtype=np.uint8)
    return ((matrix.astype(np.int64) @ key) & 1).astype(np.uint8)


def subset_parity_hash(key, seed: bytes, out_len: int) -> np.ndarray:
    key = np.asarray(key, dtype=np.uint8)
    if out_len < 0 or out_len > len(key):
        raise ValueError(f"out_len {out_len} exceeds key length {len(key)}")
    return parities(subset_matrix(seed, len(key), out_len), key)


def encode_pa_seed(seed: bytes, out_len: int) -> bytes:
    if len(seed) != 32:
        raise ValueError("privacy-amplification seed must be 32 bytes")
    return seed + out_len.to_bytes(4, "big")


def decode_pa_seed(payload: bytes) -> tuple[bytes, int]:
    if len(payload) != 36:
        raise ValueError("PA_SEED payload must be 36 bytes")
    return payload[:32], int.from_bytes(payload[32:], "big")
