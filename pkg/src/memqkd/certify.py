"""CHSH estimation and certified-randomness accounting.

Guessing probability bound for CHSH value g (bits are log2):

    P_guess <= 1/2 + 1/2 * sqrt(2 - g^2 / 4),   H_min = -log2 P_guess

Finite statistics after k uses at confidence delta (natural log):

    eps(k, delta) = sqrt(-ln(delta) * 2 * (1/q + g_meas)^2 / k)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .qstate import CHSH_SETTINGS, TwoQubitState, joint_distribution, sample_outcomes

TSIRELSON = 2.0 * math.sqrt(2.0)
SETTINGS = ((0, 0), (0, 1), (1, 0), (1, 1))


class NoCertificateError(ValueError):
    """The Bell violation is too weak to certify any randomness."""


@dataclass
class ChshCounts:
    """Coincidence counts per CHSH input pair: ``{(a, b): (n_same, n_diff)}``."""

    counts: dict = field(default_factory=lambda: {s: (0, 0) for s in SETTINGS})

    def __post_init__(self):
        clean = {}
        for s in SETTINGS:
            same, diff = self.counts.get(s, (0, 0))
            if same < 0 or diff < 0:
                raise ValueError(f"negative count for setting {s}")
            clean[s] = (int(same), int(diff))
        self.counts = clean

    @property
    def k(self) -> int:
        return sum(a + b for a, b in self.counts.values())

    def p_same(self, setting) -> float:
        same, diff = self.counts[setting]
        if same + diff == 0:
            raise ValueError(f"no samples for setting {setting}")
        return same / (same + diff)

    @classmethod
    def from_frequencies(cls, p_same: dict, per_setting: int) -> "ChshCounts":
        counts = {}
        for s in SETTINGS:
            same = int(round(p_same[s] * per_setting))
            counts[s] = (same, per_setting - same)
        return cls(counts)

    def to_json(self) -> dict:
        return {f"{a}{b}": {"n_same": c[0], "n_diff": c[1]} for (a, b), c in self.counts.items()}

    @classmethod
    def from_json(cls, data: dict) -> "ChshCounts":
        counts = {}
        try:
            for key, entry in data.items():
                a, b = int(key[0]), int(key[1])
                counts[(a, b)] = (int(entry["n_same"]), int(entry["n_diff"]))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ValueError(f"malformed CHSH counts: {exc}") from exc
        if set(counts) != set(SETTINGS):
            raise ValueError("CHSH counts must cover settings 00, 01, 10, 11")
        return cls(counts)


def simulate_chsh_counts(state: TwoQubitState, per_setting: int, rng: np.random.Generator) -> ChshCounts:
    """Sample ``per_setting`` detected coincidences in each CHSH setting."""
    counts = {}
    for s in SETTINGS:
        probs = np.tile(joint_distribution(state, CHSH_SETTINGS[s]).probs, (per_setting, 1))
        x, y = sample_outcomes(probs, rng)
        same = int(np.count_nonzero(x == y))
        counts[s] = (same, per_setting - same)
    return ChshCounts(counts)


def chsh_estimate(counts: ChshCounts) -> float:
    g = 0.0
    for a, b in SETTINGS:
        p = counts.p_same((a, b))
        g += (-1) ** (a * b) * (2.0 * p - 1.0)
    return g


def chsh_standard_error(counts: ChshCounts) -> float:
    var = 0.0
    for s in SETTINGS:
        p = counts.p_same(s)
        n = sum(counts.counts[s])
        var += 4.0 * p * (1.0 - p) / n
    return math.sqrt(var)


def _check_g(g: float) -> None:
    if not 0.0 <= g <= TSIRELSON + 1e-12:
        raise ValueError(f"CHSH value {g} outside [0, 2*sqrt(2)]")


def guessing_bound(g: float) -> float:
    _check_g(g)
    return min(1.0, 0.5 + 0.5 * math.sqrt(max(0.0, 2.0 - g * g / 4.0)))


def min_entropy(g: float) -> float:
    _check_g(g)
    if g <= 2.0:
        return 0.0
    return max(0.0, -math.log2(guessing_bound(g)))


def epsilon_finite(k: int, delta: float, g_meas: float, q: float = 0.25) -> float:
    if k <= 0:
        raise ValueError("k must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not 0.0 < q <= 0.25:
        raise ValueError(f"q must lie in (0, 0.25], got {q}")
    return math.sqrt(-math.log(delta) * 2.0 * (1.0 / q + g_meas) ** 2 / k)


def min_entropy_finite(g_meas: float, k: int, delta: float, q: float = 0.25) -> float:
    eps = epsilon_finite(k, delta, g_meas, q)
    return min_entropy(min(max(g_meas - eps, 0.0), TSIRELSON))


def block_size(h_min: float) -> int:
    if h_min <= 0:
        raise NoCertificateError("no certified randomness: min-entropy is zero")
    # Guard ceil against representation error, e.g. 1/0.5 -> 2.0000000000000004.
    return math.ceil(round(1.0 / h_min, 9))


def certified_random_length(n_r: int, h_min_finite: float) -> int:
    if n_r < 0:
        raise ValueError("n_r must be non-negative")
    return math.floor(n_r * h_min_finite + 1e-9)


def block_bound_length(n_r: int, l_b: int) -> int:
    return n_r // l_b


def required_bell_rounds(g_meas: float, delta: float, target_h: float, q: float = 0.25) -> int:
    """Smallest k with ``min_entropy_finite(g_meas, k, delta, q) >= target_h``."""
    if target_h >= min_entropy(g_meas):
        raise ValueError(f"target {target_h} unreachable: asymptotic min-entropy is {min_entropy(g_meas)}")
    ok = lambda k: min_entropy_finite(g_meas, k, delta, q) >= target_h and g_meas - epsilon_finite(k, delta, g_meas, q) > 2.0
    hi = 1
    while not ok(hi):
        hi *= 2
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class RandomnessCertificate:
    g_meas: float
    delta: float
    k: int
    epsilon: float
    h_min: float
    h_min_finite: float
    block_size: int | None
    n_r: int
    n_rand: int
    n_rand_block: int
    g_sigma: float = 0.0
    block_size_interval: tuple | None = None
    fair_sampling_assumed: bool = True
    q: float = 0.25

    def __post_init__(self):
        if self.h_min_finite > self.h_min + 1e-12:
            raise ValueError("finite min-entropy exceeds the asymptotic bound")

    def to_json(self) -> dict:
        d = asdict(self)
        d["block_size_interval"] = list(self.block_size_interval) if self.block_size_interval else None
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _block_size_or_none(h: float):
    try:
        return block_size(h)
    except NoCertificateError:
        return None


def certify(counts: ChshCounts, delta: float, n_r: int, q: float = 0.25) -> RandomnessCertificate:
    """Full pipeline from CHSH counts to the certified random length of an ``n_r``-bit key."""
    g = chsh_estimate(counts)
    sigma = chsh_standard_error(counts)
    k = counts.k
    g_clip = min(max(g, 0.0), TSIRELSON)
    eps = epsilon_finite(k, delta, g_clip, q)
    h = min_entropy(g_clip)
    hf = min_entropy_finite(g_clip, k, delta, q)
    lb = _block_size_or_none(h)
    interval = None
    if sigma > 0:
        lo_h = min_entropy(min(max(g_clip + sigma, 0.0), TSIRELSON))
        hi_h = min_entropy(min(max(g_clip - sigma, 0.0), TSIRELSON))
        interval = (_block_size_or_none(lo_h), _block_size_or_none(hi_h))
    tight = lb if lb is not None else None
    return RandomnessCertificate(
        g_meas=g, delta=delta, k=k, epsilon=eps, h_min=h, h_min_finite=hf,
        block_size=lb, n_r=n_r,
        n_rand=certified_random_length(n_r, hf),
        n_rand_block=block_bound_length(n_r, tight) if tight else 0,
        g_sigma=sigma, block_size_interval=interval, q=q,
    )
