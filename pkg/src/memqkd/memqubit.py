"""Memory-qubit dephasing: storage time to contrast, QBER and link distance.

Contrast in basis y after storing for T_s:

    C_y(T_s) = prod_i (1 - r_i) * exp(-(T_s - T_ref) / tau_c)

The budget's fixed factors are measured at T_ref (3.7 us by default), so the
exponential only adds the decay beyond that point.  Basis z is an energy
basis and does not dephase.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

from scipy.optimize import brentq

C_KM_PER_US = 0.299792458
REFERENCE_STORAGE_US = 3.7
Y_ONLY = ("readout_timing", "bfield_noise_at_ref")


@dataclass(frozen=True)
class ContrastBudget:
    """Fractional contrast losses, combined multiplicatively."""

    qubit_manipulation: float = 0.0
    state_discrimination: float = 0.0
    readout_timing: float = 0.0
    bfield_noise_at_ref: float = 0.0
    excitation: float = 0.0
    basis_selection: float = 0.0
    dark_counts: float = 0.0
    reference_time_us: float = 0.0

    def __post_init__(self):
        for f in self.factor_names():
            v = getattr(self, f)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f}={v} outside [0, 1]")
        if self.reference_time_us < 0:
            raise ValueError("reference time must be non-negative")

    @staticmethod
    def factor_names() -> list[str]:
        return [f.name for f in fields(ContrastBudget) if f.name != "reference_time_us"]

    def static_contrast(self, basis: str) -> float:
        if basis not in ("z", "y"):
            raise ValueError(f"basis must be 'z' or 'y', got {basis!r}")
        c = 1.0
        for name in self.factor_names():
            if basis == "z" and name in Y_ONLY:
                continue
            c *= 1.0 - getattr(self, name)
        return c


# Error budget of the entangled-state measurement; "much less than 1 %" is 0.
MEASURED_BUDGET = ContrastBudget(
    qubit_manipulation=0.019,
    state_discrimination=0.035,
    readout_timing=0.070,
    bfield_noise_at_ref=0.007,
    excitation=0.042,
    basis_selection=0.0,
    dark_counts=0.033,
    reference_time_us=REFERENCE_STORAGE_US,
)


@dataclass(frozen=True)
class CoherenceModel:
    coherence_time_us: float
    qubit: str = "clock"
    larmor_freq_mhz: float = 5.477

    def __post_init__(self):
        if not self.coherence_time_us > 0:
            raise ValueError("coherence time must be positive")


def contrast_at(t_s_us: float, budget: ContrastBudget, model: CoherenceModel, basis: str) -> float:
    if t_s_us < 0:
        raise ValueError("storage time must be non-negative")
    c = budget.static_contrast(basis)
    if basis == "y":
        c *= math.exp(-max(t_s_us - budget.reference_time_us, 0.0) / model.coherence_time_us)
    return c


def qber_from_contrast(c: float) -> float:
    if not -1.0 <= c <= 1.0:
        raise ValueError(f"contrast {c} outside [-1, 1]")
    return (1.0 - c) / 2.0


def mean_qber(t_s_us: float, budget: ContrastBudget, model: CoherenceModel) -> float:
    ez = qber_from_contrast(contrast_at(t_s_us, budget, model, "z"))
    ey = qber_from_contrast(contrast_at(t_s_us, budget, model, "y"))
    return 0.5 * (ez + ey)


def max_storage_time(budget: ContrastBudget, model: CoherenceModel, threshold_e: float) -> float:
    """Storage time (us) at which the basis-averaged QBER reaches ``threshold_e``."""
    if mean_qber(0.0, budget, model) >= threshold_e:
        raise ValueError("QBER already exceeds the threshold at zero storage time")
    floor_e = 0.5 * (qber_from_contrast(budget.static_contrast("z")) + 0.5)
    if threshold_e >= floor_e:
        return math.inf
    hi = max(budget.reference_time_us, 1.0)
    while mean_qber(hi, budget, model) < threshold_e:
        hi *= 2.0
    lo = 0.0
    while hi - lo > 0.01:
        mid = 0.5 * (lo + hi)
        if mean_qber(mid, budget, model) < threshold_e:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_coherence(budget: ContrastBudget, t_target_us: float, threshold_e: float) -> float:
    """Coherence time that puts the threshold crossing at ``t_target_us``."""
    f = lambda tau: mean_qber(t_target_us, budget, CoherenceModel(tau)) - threshold_e
    return brentq(f, 1e-3, 1e9, xtol=1e-9, rtol=1e-12)


def coherence_from_reference_loss(loss: float, t_ref_us: float = REFERENCE_STORAGE_US) -> float:
    """Coherence time implied by a contrast loss ``loss`` after ``t_ref_us``."""
    if not 0.0 < loss < 1.0:
        raise ValueError("loss must lie in (0, 1)")
    return -t_ref_us / math.log1p(-loss)


# Clock qubit: calibrated against the 1.2 ms crossing at 9.92 % (frozen).
CLOCK_TAU_US = 10972.3264
# Zeeman qubit: the 0.7 % field-noise loss at 3.7 us read as pure dephasing.
UPDOWN_TAU_US = 526.7193
CLOCK = CoherenceModel(CLOCK_TAU_US, "clock")
UPDOWN = CoherenceModel(UPDOWN_TAU_US, "updown")


def link_distance(t_s_us: float) -> float:
    """Vacuum distance (km) light travels during the storage time."""
    if t_s_us < 0:
        raise ValueError("storage time must be non-negative")
    return C_KM_PER_US * t_s_us


def storage_table(times_us, budget: ContrastBudget = MEASURED_BUDGET,
                  updown: CoherenceModel = UPDOWN, clock: CoherenceModel = CLOCK) -> list[dict]:
    return [
        {
            "storage_us": t,
            "qber_updown": mean_qber(t, budget, updown),
            "qber_clock": mean_qber(t, budget, clock),
            "distance_km": link_distance(t),
        }
        for t in times_us
    ]


def write_storage_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["storage_us", "qber_updown", "qber_clock", "distance_km"])
        w.writeheader()
        for r in rows:
            w.writerow({k: f"{v:.10g}" for k, v in r.items()})
