"""Two-qubit atom-photon state and its projective measurement statistics.

The shared state is the Bell state (|00> - |11>)/sqrt(2) (atom and photon
qubits), mixed with isotropic white noise of weight 1 - V.  Its correlation
tensor is diagonal, diag(-1, +1, +1) in (x, y, z), so for Bloch axes a and b

    P(x, y) = (1 + (-1)^(x+y) * V * a.T b) / 4,   T = diag(-1, 1, 1)

Outcome bit 0 is the +1 eigenvalue of the measured Pauli combination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT2 = math.sqrt(2.0)

AXES: dict[str, np.ndarray] = {
    "Z": np.array([0.0, 0.0, 1.0]),
    "Y": np.array([0.0, 1.0, 0.0]),
    "X": np.array([1.0, 0.0, 0.0]),
    "Y-X": np.array([-1.0, 1.0, 0.0]) / SQRT2,
    "Y+X": np.array([1.0, 1.0, 0.0]) / SQRT2,
}

# Correlation tensor of the pure state, <sigma_i (x) sigma_j>.
CORRELATION_TENSOR = np.diag([-1.0, 1.0, 1.0])

# Joint outcome ordering used everywhere: index = 2 * x + y.
OUTCOMES = ((0, 0), (0, 1), (1, 0), (1, 1))

_NEG_TOL = 1e-15
_AXIS_TOL = 1e-12

_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def _as_axis(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"Bloch axis must be a 3-vector, got shape {v.shape}")
    if abs(np.linalg.norm(v) - 1.0) > _AXIS_TOL:
        raise ValueError(f"Bloch axis {v} is not unit length")
    return v


@dataclass(frozen=True)
class TwoQubitState:
    """Werner-mixed atom-photon state with visibility ``V``."""

    visibility: float

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility must lie in [0, 1], got {self.visibility}")

    @property
    def fidelity(self) -> float:
        return (self.visibility + 1.0) / 2.0

    def density_matrix(self) -> np.ndarray:
        psi = np.array([1.0, 0.0, 0.0, -1.0], dtype=complex) / SQRT2
        pure = np.outer(psi, psi.conj())
        v = self.visibility
        return v * pure + (1.0 - v) * np.eye(4, dtype=complex) / 4.0


@dataclass(frozen=True)
class MeasurementSetting:
    """Bloch axes measured by Alice (atom) and Bob (photon)."""

    alice_axis: np.ndarray = field(compare=False)
    bob_axis: np.ndarray = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alice_axis", _as_axis(self.alice_axis))
        object.__setattr__(self, "bob_axis", _as_axis(self.bob_axis))

    @classmethod
    def named(cls, alice: str, bob: str) -> "MeasurementSetting":
        return cls(AXES[alice], AXES[bob])


# CHSH settings keyed by the binary inputs (a, b).
CHSH_SETTINGS: dict[tuple[int, int], MeasurementSetting] = {
    (0, 0): MeasurementSetting.named("Y-X", "Y"),
    (0, 1): MeasurementSetting.named("Y-X", "X"),
    (1, 0): MeasurementSetting.named("Y+X", "Y"),
    (1, 1): MeasurementSetting.named("Y+X", "X"),
}

# Key-generation bases: input 0 -> sigma_z, input 1 -> sigma_y on both sides.
KEY_AXES = (AXES["Z"], AXES["Y"])


@dataclass(frozen=True)
class OutcomeDistribution:
    probs: np.ndarray = field(compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).copy()
        if p.shape != (4,):
            raise ValueError("outcome distribution needs four entries")
        if np.any(p < -_NEG_TOL):
            raise ValueError(f"negative probability in {p}")
        p[p < 0] = 0.0
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()}, expected 1")
        object.__setattr__(self, "probs", p)

    def p(self, x: int, y: int) -> float:
        return float(self.probs[2 * x + y])

    @property
    def p_same(self) -> float:
        return float(self.probs[0] + self.probs[3])

    @property
    def p_diff(self) -> float:
        return float(self.probs[1] + self.probs[2])

    def marginals(self) -> tuple[float, float]:
        """Probability of bit 0 for Alice and for Bob."""
        return float(self.probs[0] + self.probs[1]), float(self.probs[0] + self.probs[2])


def correlation(visibility: float, alice_axis, bob_axis) -> float:
    """<A (x) B> for the Werner state."""
    return float(visibility * (np.asarray(alice_axis) @ CORRELATION_TENSOR @ np.asarray(bob_axis)))


def joint_distribution(state: TwoQubitState, setting: MeasurementSetting) -> OutcomeDistribution:
    e = correlation(state.visibility, setting.alice_axis, setting.bob_axis)
    same = (1.0 + e) / 4.0
    diff = (1.0 - e) / 4.0
    return OutcomeDistribution(np.array([same, diff, diff, same]))


def joint_probabilities(visibility, alice_axes: np.ndarray, bob_axes: np.ndarray) -> np.ndarray:
    """Vectorised joint distribution for many rounds.

    ``alice_axes`` and ``bob_axes`` have shape (N, 3); ``visibility`` is a
    scalar or an (N,) array.  Returns an (N, 4) array in ``OUTCOMES`` order.
    """
    e = np.asarray(visibility) * np.einsum("ni,ij,nj->n", alice_axes, CORRELATION_TENSOR, bob_axes)
    same = (1.0 + e) / 4.0
    diff = (1.0 - e) / 4.0
    return np.stack([same, diff, diff, same], axis=-1)


def sample_outcome(dist: OutcomeDistribution, rng: np.random.Generator) -> tuple[int, int]:
    k = int(np.searchsorted(np.cumsum(dist.probs), rng.random(), side="right"))
    k = min(k, 3)
    # Never land on a zero-weight outcome through round-off at the edges.
    while dist.probs[k] == 0.0:
        k -= 1
    return OUTCOMES[k]


def sample_outcomes(probs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw one joint outcome per row of an (N, 4) probability array."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    k = (u[:, None] >= cdf).sum(axis=1)
    k = np.minimum(k, 3)
    return (k >> 1).astype(np.uint8), (k & 1).astype(np.uint8)


def visibility_from_fidelity(fidelity: float) -> float:
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError(f"fidelity must lie in [0, 1], got {fidelity}")
    return 2.0 * fidelity - 1.0


def expected_chsh(visibility: float) -> float:
    return 2.0 * SQRT2 * visibility


def chsh_from_state(state: TwoQubitState) -> float:
    """CHSH combination assembled from the four CHSH settings."""
    g = 0.0
    for (a, b), setting in CHSH_SETTINGS.items():
        d = joint_distribution(state, setting)
        g += (-1) ** (a * b) * (d.p_same - d.p_diff)
    return g


def pauli_observable(axis) -> np.ndarray:
    """n . sigma as a 2x2 matrix."""
    axis = np.asarray(axis, dtype=float)
    return sum(c * s for c, s in zip(axis, _PAULI))
