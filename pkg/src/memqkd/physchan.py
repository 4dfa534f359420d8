"""Photonic channel and detector model on Bob's side.

Loss is quoted for photons registered inside a reference gate (the 15 ns
operating window), since that is how the end-to-end detection probability
of the setup is measured.  The pre-gate probability that a photon produces a
click is therefore ``survival / acceptance(reference_gate)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

# Gamma(2) profile: half-maximum points of x*exp(1-x) bracket a width of
# GAMMA2_FWHM * theta.
GAMMA2_FWHM = 2.446386037030126
DETECTORS = ("V", "H")  # detector registering outcome bit 0 / bit 1


@dataclass(frozen=True)
class ArrivalProfile:
    """Photon arrival-time density: sum of an exponential rise and decay.

    The density is (exp(-t/decay) - exp(-t/rise)) / (decay - rise), the law
    of Exp(rise) + Exp(decay).  ``rise == decay`` degenerates to Gamma(2).
    """

    rise_ns: float
    decay_ns: float

    @classmethod
    def calibrated(cls, fwhm_ns: float, rise_ns: float = 1.3) -> "ArrivalProfile":
        """Pick the decay so the full profile has the requested FWHM."""
        floor = rise_ns * math.log(2.0)
        if fwhm_ns <= floor * 1.001:
            theta = fwhm_ns / GAMMA2_FWHM
            return cls(theta, theta)
        decay = brentq(lambda d: cls(rise_ns, d).fwhm() - fwhm_ns, 1e-6 * rise_ns, 1e4 * rise_ns + 10 * fwhm_ns, xtol=1e-12)
        return cls(rise_ns, decay)

    @property
    def _degenerate(self) -> bool:
        return abs(self.decay_ns - self.rise_ns) < 1e-9 * max(self.rise_ns, self.decay_ns)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        r, d = self.rise_ns, self.decay_ns
        if self._degenerate:
            out = t / r**2 * np.exp(-t / r)
        else:
            out = (np.exp(-t / d) - np.exp(-t / r)) / (d - r)
        return np.where(t >= 0, out, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        r, d = self.rise_ns, self.decay_ns
        tc = np.maximum(t, 0.0)
        if self._degenerate:
            out = 1.0 - (1.0 + tc / r) * np.exp(-tc / r)
        else:
            out = 1.0 - (d * np.exp(-tc / d) - r * np.exp(-tc / r)) / (d - r)
        return np.where(t > 0, out, 0.0)

    def peak_time(self) -> float:
        r, d = self.rise_ns, self.decay_ns
        if self._degenerate:
            return r
        return r * d / (d - r) * math.log(d / r)

    def fwhm(self) -> float:
        tp = self.peak_time()
        half = float(self.pdf(tp)) / 2.0
        f = lambda t: float(self.pdf(t)) - half
        lo = brentq(f, 0.0, tp) if tp > 0 else 0.0
        hi_end = tp + 50.0 * max(self.rise_ns, self.decay_ns)
        hi = brentq(f, tp, hi_end)
        return hi - lo

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(self.rise_ns, size) + rng.exponential(self.decay_ns, size)


@dataclass(frozen=True)
class ChannelParams:
    loss_db: float = 26.0
    dark_count_prob_per_window: float = 1e-5
    gate_width_ns: float = 15.0
    detector_dead_time_ns: float = 20.0
    efficiency_mismatch: float = 0.98
    photon_fwhm_ns: float = 9.3
    rise_ns: float = 1.3
    record_window_ns: float = 100.0
    reference_gate_ns: float = 15.0
    profile: ArrivalProfile = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = [self.dark_count_prob_per_window, self.gate_width_ns, self.detector_dead_time_ns,
                  self.efficiency_mismatch, self.photon_fwhm_ns, self.rise_ns,
                  self.record_window_ns, self.reference_gate_ns]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("channel parameters must be finite")
        if self.loss_db < 0 or math.isnan(self.loss_db):
            raise ValueError(f"loss must be non-negative, got {self.loss_db}")
        if not 0.0 <= self.dark_count_prob_per_window <= 1.0:
            raise ValueError("dark-count probability must lie in [0, 1]")
        if not 0.0 <= self.efficiency_mismatch <= 1.0:
            raise ValueError("efficiency mismatch must lie in [0, 1]")
        for name in ("gate_width_ns", "detector_dead_time_ns", "photon_fwhm_ns", "rise_ns",
                     "record_window_ns", "reference_gate_ns"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "profile", ArrivalProfile.calibrated(self.photon_fwhm_ns, self.rise_ns))

    def with_(self, **changes) -> "ChannelParams":
        return replace(self, **changes)

    def gate_acceptance(self, gate_ns: float | None = None) -> float:
        """Fraction of the arrival profile inside ``[0, gate_ns]``."""
        return float(self.profile.cdf(self.gate_width_ns if gate_ns is None else gate_ns))

    def click_probability(self) -> float:
        """Pre-gate probability that an emitted photon clicks a unit-efficiency arm."""
        return min(1.0, survival_probability(self.loss_db) / self.gate_acceptance(self.reference_gate_ns))

    def arm_efficiency(self, bit: int) -> float:
        return self.efficiency_mismatch if bit == 1 else 1.0

    @property
    def dark_rate_per_ns(self) -> float:
        return self.dark_count_prob_per_window / self.detector_dead_time_ns


@dataclass(frozen=True)
class TimingParams:
    rep_rate_hz: float = 20e3
    init_time_us: float = 100.0
    ion_readout_time_us: float = 400.0
    basis_switch_time_ms: float = 40.0
    passive_switching: bool = False

    def __post_init__(self):
        for name in ("rep_rate_hz", "init_time_us", "ion_readout_time_us"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.basis_switch_time_ms < 0:
            raise ValueError("basis switch time must be non-negative")

    @property
    def attempt_period_s(self) -> float:
        return max(1.0 / self.rep_rate_hz, self.init_time_us * 1e-6)


TIMING_PRESETS = {
    "current": TimingParams(),
    "passive": TimingParams(passive_switching=True),
    "optimized": TimingParams(rep_rate_hz=250e3, init_time_us=4.0, passive_switching=True),
}


@dataclass(frozen=True)
class DetectionEvent:
    detector_id: str
    arrival_time_ns: float
    true_photon: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.detector_id not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector_id!r}")
        if self.arrival_time_ns < 0:
            raise ValueError("arrival time must be non-negative")


def survival_probability(loss_db: float) -> float:
    if loss_db < 0:
        raise ValueError(f"loss must be non-negative, got {loss_db}")
    return 10.0 ** (-loss_db / 10.0)


def sample_arrival_time(params: ChannelParams, rng: np.random.Generator, size=None):
    return params.profile.sample(rng, size)


def dark_events(params: ChannelParams, rng: np.random.Generator) -> list[DetectionEvent]:
    lam = params.dark_rate_per_ns * params.record_window_ns
    events = []
    for det in DETECTORS:
        for t in rng.uniform(0.0, params.record_window_ns, rng.poisson(lam)):
            events.append(DetectionEvent(det, float(t), False))
    return events


def detect(photon_present: bool, params: ChannelParams, rng: np.random.Generator,
           bit: int | None = None) -> list[DetectionEvent]:
    """Detector clicks for one repetition period, sorted by time.

    ``bit`` is the projective outcome the photon would register (decided by
    the state sampling upstream); a fair coin is used when it is omitted.
    Events after the record window are not registered.
    """
    events = []
    if photon_present:
        if bit is None:
            bit = int(rng.random() < 0.5)
        p = params.click_probability() * params.arm_efficiency(bit)
        if rng.random() < p:
            t = float(sample_arrival_time(params, rng))
            if t < params.record_window_ns:
                events.append(DetectionEvent(DETECTORS[bit], t, True))
    if params.dark_count_prob_per_window > 0:
        events.extend(dark_events(params, rng))
    events.sort(key=lambda e: e.arrival_time_ns)
    return events


def apply_gate(events, gate_width_ns: float):
    if gate_width_ns <= 0:
        raise ValueError("gate width must be positive")
    return [e for e in events if e.arrival_time_ns <= gate_width_ns]


def registered_clicks(events, dead_time_ns: float):
    """Drop clicks a detector cannot register while it is still dead."""
    last: dict[str, float] = {}
    out = []
    for e in events:
        t0 = last.get(e.detector_id)
        if t0 is not None and e.arrival_time_ns - t0 < dead_time_ns:
            continue
        last[e.detector_id] = e.arrival_time_ns
        out.append(e)
    return out


def double_click_filter(events, dead_time_ns: float) -> bool:
    """Accept a repetition period unless it holds two or more registered clicks."""
    return len(registered_clicks(events, dead_time_ns)) < 2


def sifted_rate_model(ch: ChannelParams, t: TimingParams) -> tuple[float, float]:
    """Sifted key rate (Hz) and sifted bits per entanglement attempt.

    With p the probability that an attempt yields a gated click,

        bits_per_use = p * 1/2
        T_detection  = (1/p) * T_attempt + T_readout + T_switch * [active]
        rate         = 1/2 / T_detection

    where T_attempt = max(1/rep_rate, T_init).  Equivalently
    rate = bits_per_use / (T_detection * p), bits per mean time per attempt.
    """
    arm = 0.5 * (1.0 + ch.efficiency_mismatch)
    p = ch.click_probability() * ch.gate_acceptance() * arm
    bits_per_use = 0.5 * p
    if p <= 0:
        return 0.0, 0.0
    t_det = t.attempt_period_s / p + t.ion_readout_time_us * 1e-6
    if not t.passive_switching:
        t_det += t.basis_switch_time_ms * 1e-3
    return 0.5 / t_det, bits_per_use


def simulate_clicks(bits, params: ChannelParams, rng: np.random.Generator) -> dict[int, list[DetectionEvent]]:
    """Vectorised :func:`detect` over many periods.

    ``bits[i]`` is the outcome a photon in period ``i`` would register, or -1
    when no photon is present.  Only periods with at least one event appear
    in the result.
    """
    bits = np.asarray(bits, dtype=np.int64)
    n = len(bits)
    present = bits >= 0
    eff = np.where(bits == 1, params.efficiency_mismatch, 1.0)
    clicked = present & (rng.random(n) < params.click_probability() * eff)
    times = np.full(n, np.inf)
    idx = np.flatnonzero(clicked)
    times[idx] = sample_arrival_time(params, rng, len(idx))
    clicked &= times < params.record_window_ns
    out: dict[int, list[DetectionEvent]] = {}
    for i in np.flatnonzero(clicked):
        out[int(i)] = [DetectionEvent(DETECTORS[bits[i]], float(times[i]), True)]
    lam = params.dark_rate_per_ns * params.record_window_ns
    if lam > 0:
        darks = rng.poisson(lam, (n, 2))
        for i, d in zip(*np.nonzero(darks)):
            ts = rng.uniform(0.0, params.record_window_ns, darks[i, d])
            out.setdefault(int(i), []).extend(DetectionEvent(DETECTORS[d], float(t), False) for t in ts)
    for events in out.values():
        events.sort(key=lambda e: e.arrival_time_ns)
    return out


def resolve_click(events, params: ChannelParams, gate_ns: float | None = None):
    """Bob's bit for one period, or None if it is discarded.

    Clicks are first merged by detector dead time, then gated; a period
    is kept only when exactly one registered click falls in the gate.
    """
    gated = apply_gate(registered_clicks(events, params.detector_dead_time_ns),
                       params.gate_width_ns if gate_ns is None else gate_ns)
    if len(gated) != 1:
        return None
    return DETECTORS.index(gated[0].detector_id)
