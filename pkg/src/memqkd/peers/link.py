"""Emulated atom-photon link.

Both peers hold their own :class:`QuantumLink` built from the same physics
seed, so each can regenerate the shared photonic randomness of a batch
without it crossing the classical channel.  Bob's side sees detector clicks;
Alice's side reads out the memory qubit only for heralded rounds and only
after the bases are known, which is when the emulator can apply the joint
statistics.

Per round the photon's outcome y is uniform in either basis.  Given y the
atom gives x = y with probability (1 + E) / 2, E = V_ab * a.T b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..memqubit import MEASURED_BUDGET
from ..physchan import ChannelParams, resolve_click, simulate_clicks
from ..qstate import CORRELATION_TENSOR, KEY_AXES

PHOTON_STREAM = 0
ATOM_STREAM = 1
BELL_STREAM = 2

DEFAULT_VZ = MEASURED_BUDGET.static_contrast("z")
DEFAULT_VY = MEASURED_BUDGET.static_contrast("y")


@dataclass(frozen=True)
class LinkParams:
    channel: ChannelParams = field(default_factory=ChannelParams)
    visibility_z: float = DEFAULT_VZ
    visibility_y: float = DEFAULT_VY
    inject_error_rate: float = 0.0

    def __post_init__(self):
        for v in (self.visibility_z, self.visibility_y):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"visibility {v} outside [0, 1]")
        if not 0.0 <= self.inject_error_rate <= 1.0:
            raise ValueError("inject_error_rate must lie in [0, 1]")

    def correlation(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """E for key-basis inputs (0 = Z, 1 = Y) on both sides."""
        axes = np.stack(KEY_AXES)
        overlap = np.einsum("ni,ij,nj->n", axes[a], CORRELATION_TENSOR, axes[b])
        vis = np.where((a == 0) & (b == 0), self.visibility_z, self.visibility_y)
        return vis * overlap


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass
class PhotonBatch:
    """Shared photonic truth of one batch of entanglement attempts."""

    n: int
    photon_bits: np.ndarray
    events: dict
    bob_bits: dict = field(default_factory=dict)

    @property
    def detected(self) -> np.ndarray:
        return np.array(sorted(self.bob_bits), dtype=np.int64)


class QuantumLink:
    def __init__(self, seed: int, params: LinkParams | None = None):
        self.seed = int(seed)
        self.params = params or LinkParams()
        self._cache: tuple[int, PhotonBatch] | None = None

    def batch(self, j: int, n: int) -> PhotonBatch:
        if self._cache is not None and self._cache[0] == j and self._cache[1].n == n:
            return self._cache[1]
        rng = stream_rng(self.seed, j, PHOTON_STREAM)
        bits = rng.integers(0, 2, n)
        events = simulate_clicks(bits, self.params.channel, rng)
        pb = PhotonBatch(n, bits, events)
        for i, ev in events.items():
            bit = resolve_click(ev, self.params.channel)
            if bit is not None:
                pb.bob_bits[i] = bit
        self._cache = (j, pb)
        return pb

    def bob_measure(self, j: int, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices of rounds with exactly one gated click, and Bob's bits there."""
        pb = self.batch(j, n)
        idx = pb.detected
        return idx, np.array([pb.bob_bits[i] for i in idx], dtype=np.uint8)

    def alice_measure(self, j: int, n: int, indices, a, b) -> np.ndarray:
        """Atom outcomes for heralded rounds ``indices`` with inputs a (Alice), b (Bob)."""
        pb = self.batch(j, n)
        indices = np.asarray(indices, dtype=np.int64)
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        rng = stream_rng(self.seed, j, ATOM_STREAM)
        u = rng.random(len(indices))
        coin = rng.integers(0, 2, len(indices))
        flip = rng.random(len(indices)) < self.params.inject_error_rate
        y = pb.photon_bits[indices]
        e = self.params.correlation(a, b)
        x = np.where(u < (1.0 + e) / 2.0, y, 1 - y)
        from_photon = np.array([any(ev.true_photon for ev in pb.events[i]) for i in indices], dtype=bool)
        # A dark click heralds a round in which the atom is uncorrelated with Bob.
        x = np.where(from_photon, x, coin)
        return (x ^ flip).astype(np.uint8)
