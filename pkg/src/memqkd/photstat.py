"""Hanbury Brown and Twiss analysis of pulsed photon sources.

Delays t_b - t_a are histogrammed over +-(20.5) repetition periods.  The
peak at m periods integrates the bins whose centres round to m, so the
centre window is one period wide around zero.  g2(0) is the centre integral
over the mean of the side-peak integrals (m = +-1 .. +-20).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit
from scipy.stats import norm

from .physchan import ChannelParams, DETECTORS, DetectionEvent, ArrivalProfile, resolve_click, simulate_clicks

SIDE_PEAKS = 20
MIN_SIDE_PEAKS = 10
SOURCES = ("single_photon", "coherent", "two_photon")


class UnreliableUncertainty(ValueError):
    pass


@dataclass(frozen=True)
class TimeTagStream:
    detector_id: str
    timestamps: np.ndarray
    duration_ns: float
    rep_period_ns: float

    def __post_init__(self):
        if self.detector_id not in ("A", "B"):
            raise ValueError(f"detector must be 'A' or 'B', got {self.detector_id!r}")
        ts = np.asarray(self.timestamps, dtype=float)
        if ts.size and (ts[0] < 0 or ts[-1] > self.duration_ns):
            raise ValueError("timestamps outside [0, duration]")
        if np.any(np.diff(ts) < 0):
            raise ValueError("timestamps must be sorted")
        object.__setattr__(self, "timestamps", ts)

    @property
    def rate_hz(self) -> float:
        return len(self.timestamps) / (self.duration_ns * 1e-9)


@dataclass
class CorrelationHistogram:
    bin_width_ns: float
    tau_ns: np.ndarray
    counts: np.ndarray
    rep_period_ns: float
    duration_ns: float
    normalization: float = 0.0
    g2_zero: float = math.nan
    g2_zero_sigma: float = math.nan
    floored: bool = False
    accidentals_per_bin: float = 0.0
    raw_counts: np.ndarray | None = None
    side_peaks: int = SIDE_PEAKS
    meta: dict = field(default_factory=dict)

    @property
    def normalized(self) -> np.ndarray:
        return self.counts / self.normalization if self.normalization > 0 else np.zeros_like(self.counts, dtype=float)

    def peak_index(self) -> np.ndarray:
        return np.rint(self.tau_ns / self.rep_period_ns).astype(int)

    def signal(self) -> np.ndarray:
        """Counts with accidentals removed but not floored, so empty bins add no bias."""
        return self.counts if self.raw_counts is None else self.raw_counts - self.accidentals_per_bin

    def peak_integrals(self) -> dict[int, float]:
        m = self.peak_index()
        base = self.signal()
        return {int(k): float(base[m == k].sum()) for k in np.unique(m)}


def simulate_hbt(source: str, rep_rate_hz: float, duration_s: float, rng: np.random.Generator,
                 dark_rate_a_hz: float = 0.0, dark_rate_b_hz: float = 0.0, efficiency: float = 0.01,
                 mean_photons: float = 1.0, profile: ArrivalProfile | None = None):
    """Time tags of a fair beam splitter followed by two detectors.

    Each detector registers at most one click per pulse (dead time much
    shorter than the period, much longer than the photon).
    """
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}")
    if rep_rate_hz <= 0 or duration_s <= 0:
        raise ValueError("rates and durations must be positive")
    if not 0.0 < efficiency <= 1.0:
        raise ValueError("efficiency must lie in (0, 1]")
    profile = profile or ChannelParams().profile
    period = 1e9 / rep_rate_hz
    n_pulses = int(round(rep_rate_hz * duration_s))
    duration_ns = n_pulses * period
    if source == "single_photon":
        k = np.ones(n_pulses, dtype=np.int64)
    elif source == "two_photon":
        k = np.full(n_pulses, 2, dtype=np.int64)
    else:
        k = rng.poisson(mean_photons, n_pulses)
    to_a = rng.binomial(k, 0.5)
    to_b = k - to_a
    streams = []
    for name, n_ph, dark in (("A", to_a, dark_rate_a_hz), ("B", to_b, dark_rate_b_hz)):
        p_click = 1.0 - (1.0 - efficiency) ** n_ph
        pulses = np.flatnonzero(rng.random(n_pulses) < p_click)
        t = pulses * period + profile.sample(rng, len(pulses))
        n_dark = rng.poisson(dark * duration_s)
        t = np.concatenate([t, rng.uniform(0.0, duration_ns, n_dark)])
        t = np.sort(t[t <= duration_ns])
        streams.append(TimeTagStream(name, t, duration_ns, period))
    return streams[0], streams[1]


def _pair_delays(ta: np.ndarray, tb: np.ndarray, tau_max: float) -> np.ndarray:
    lo = np.searchsorted(tb, ta - tau_max, side="left")
    hi = np.searchsorted(tb, ta + tau_max, side="right")
    n = hi - lo
    if n.sum() == 0:
        return np.empty(0)
    a_idx = np.repeat(np.arange(len(ta)), n)
    offsets = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    return tb[np.repeat(lo, n) + offsets] - ta[a_idx]


def correlate(a: TimeTagStream, b: TimeTagStream, bin_width_ns: float,
              tau_max_ns: float | None = None) -> CorrelationHistogram:
    if len(a.timestamps) == 0 or len(b.timestamps) == 0:
        raise ValueError("cannot correlate empty streams")
    if not math.isclose(a.rep_period_ns, b.rep_period_ns, rel_tol=1e-9):
        raise ValueError("streams have different repetition periods")
    if bin_width_ns <= 0:
        raise ValueError("bin width must be positive")
    period = a.rep_period_ns
    if tau_max_ns is None:
        tau_max_ns = (SIDE_PEAKS + 0.5) * period
    k = int(math.floor(tau_max_ns / bin_width_ns))
    centres = np.arange(-k, k + 1) * bin_width_ns
    edges = np.append(centres - bin_width_ns / 2, centres[-1] + bin_width_ns / 2)
    delays = _pair_delays(a.timestamps, b.timestamps, edges[-1])
    counts, _ = np.histogram(delays, bins=edges)
    hist = CorrelationHistogram(bin_width_ns, centres, counts.astype(float), period, a.duration_ns,
                                meta={"side_peaks": SIDE_PEAKS, "centre_window_ns": period})
    return normalize(hist)


def _side_mask(hist: CorrelationHistogram) -> np.ndarray:
    m = np.abs(hist.peak_index())
    return (m >= 1) & (m <= hist.side_peaks)


def normalize(hist: CorrelationHistogram) -> CorrelationHistogram:
    side = _side_mask(hist)
    hist.normalization = float(hist.signal()[side].mean()) if side.any() else 0.0
    if side.any() and len(set(np.abs(hist.peak_index()[side]))) >= MIN_SIDE_PEAKS:
        hist.g2_zero, hist.g2_zero_sigma = g2_zero_with_uncertainty(hist)
    return hist


def noise_correct(hist: CorrelationHistogram, dark_rate_a: float, dark_rate_b: float,
                  signal_rate_a: float, signal_rate_b: float) -> CorrelationHistogram:
    """Subtract accidental coincidences that involve a dark count (rates in Hz).

    Per bin:  (r_a d_b + r_b d_a + d_a d_b) * bin_width * duration.
    """
    rates = (dark_rate_a, dark_rate_b, signal_rate_a, signal_rate_b)
    if min(rates) < 0:
        raise ValueError("rates must be non-negative")
    if dark_rate_a == 0 and dark_rate_b == 0:
        return replace(hist, counts=hist.counts.copy(), meta=dict(hist.meta))
    acc = (signal_rate_a * dark_rate_b + signal_rate_b * dark_rate_a + dark_rate_a * dark_rate_b)
    acc *= hist.bin_width_ns * 1e-9 * hist.duration_ns * 1e-9
    counts = hist.counts - acc
    floored = bool(np.any(counts < 0))
    if floored:
        warnings.warn("noise correction produced negative counts; floored at 0", RuntimeWarning, stacklevel=2)
        counts = np.maximum(counts, 0.0)
    raw = hist.counts if hist.raw_counts is None else hist.raw_counts
    out = replace(hist, counts=counts, floored=floored, accidentals_per_bin=hist.accidentals_per_bin + acc,
                  raw_counts=raw.copy(), meta=dict(hist.meta))
    return normalize(out)


def g2_zero_with_uncertainty(hist: CorrelationHistogram) -> tuple[float, float]:
    """Centre over mean side integral; sigma from a Gaussian fit to the side integrals."""
    peaks = hist.peak_integrals()
    side = [peaks[m] for m in peaks if 1 <= abs(m) <= hist.side_peaks]
    if len(side) < MIN_SIDE_PEAKS:
        raise UnreliableUncertainty(f"only {len(side)} side peaks; need {MIN_SIDE_PEAKS}")
    mu, sd = norm.fit(side)
    if mu <= 0:
        raise UnreliableUncertainty("side peaks are empty")
    centre = peaks.get(0, 0.0)
    value = centre / mu
    # Centre integral carries the baseline noise; the mean carries sd/sqrt(N).
    sigma = math.hypot(sd / mu, value * sd / (mu * math.sqrt(len(side))))
    return value, sigma


def expected_g2(source: str, efficiency: float = 0.0, mean_photons: float = 1.0) -> float:
    """Reference g2(0) for the simulated sources with click saturation."""
    if source == "single_photon":
        return 0.0
    if source == "coherent":
        return 1.0
    p_one = 1.0 - (1.0 - efficiency / 2.0) ** 2
    return (efficiency**2 / 2.0) / p_one**2


def read_timetags(path, rep_period_ns: float, duration_ns: float | None = None):
    tags = {"A": [], "B": []}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tags[row["detector"]].append(float(row["timestamp_ns"]))
    if duration_ns is None:
        duration_ns = max((max(v) for v in tags.values() if v), default=0.0)
    return tuple(TimeTagStream(d, np.sort(tags[d]), duration_ns, rep_period_ns) for d in ("A", "B"))


def write_timetags(path, a: TimeTagStream, b: TimeTagStream) -> None:
    rows = [(s.detector_id, t) for s in (a, b) for t in s.timestamps]
    rows.sort(key=lambda r: r[1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector", "timestamp_ns"])
        w.writerows((d, f"{t:.6f}") for d, t in rows)


def write_histogram(path, hist: CorrelationHistogram) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_ns", "count", "normalized"])
        for t, c, g in zip(hist.tau_ns, hist.counts, hist.normalized):
            w.writerow([f"{t:.6f}", f"{c:.6f}", f"{g:.8g}"])


# Gate-window sweep ---------------------------------------------------------

@dataclass(frozen=True)
class SweepRound:
    """One heralded period with its raw events and Alice's matching-basis bit."""

    events: tuple[DetectionEvent, ...]
    alice_bit: int


@dataclass
class GateSweep:
    rows: list[tuple[float, float, float | None]]
    fit_amplitude: float | None = None
    fit_t0_ns: float | None = None
    fit_rms: float | None = None


def simulate_sweep_rounds(n_periods: int, params: ChannelParams, contrast: float,
                          rng: np.random.Generator) -> list[SweepRound]:
    """Matching-basis periods with ground truth; only periods with events are kept."""
    if not -1.0 <= contrast <= 1.0:
        raise ValueError("contrast must lie in [-1, 1]")
    alice = rng.integers(0, 2, n_periods)
    flip = rng.random(n_periods) < (1.0 - contrast) / 2.0
    clicks = simulate_clicks(alice ^ flip, params, rng)
    out = []
    for i, events in sorted(clicks.items()):
        a = int(alice[i])
        if not any(e.true_photon for e in events):
            a = int(rng.integers(0, 2))  # herald-free period: Alice's bit is unrelated
        out.append(SweepRound(tuple(events), a))
    return out


def _saturation(w, a, t0):
    return a * (1.0 - np.exp(-w / t0))


def gate_sweep(rounds, gate_widths, params: ChannelParams | None = None) -> GateSweep:
    """Accepted fraction (relative to the widest gate) and QBER per gate width."""
    params = params or ChannelParams()
    widths = [float(w) for w in gate_widths]
    if any(w <= 0 for w in widths):
        raise ValueError("gate widths must be positive")
    full = sum(resolve_click(r.events, params, params.record_window_ns) is not None for r in rounds)
    rows = []
    for w in widths:
        bits = [(resolve_click(r.events, params, w), r.alice_bit) for r in rounds]
        kept = [(b, a) for b, a in bits if b is not None]
        frac = len(kept) / full if full else 0.0
        qber = sum(b != a for b, a in kept) / len(kept) if kept else None
        rows.append((w, frac, qber))
    sweep = GateSweep(rows)
    ws = np.array(widths)
    fs = np.array([r[1] for r in rows])
    if len(ws) >= 3 and fs.max() > 0:
        try:
            (a, t0), _ = curve_fit(_saturation, ws, fs, p0=(1.0, max(ws.mean(), 1.0)), maxfev=10000)
            sweep.fit_amplitude, sweep.fit_t0_ns = float(a), float(t0)
            sweep.fit_rms = float(np.sqrt(np.mean((_saturation(ws, a, t0) - fs) ** 2)))
        except RuntimeError:
            pass
    return sweep


def write_sweep(path, sweep: GateSweep) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gate_ns", "fraction", "qber"])
        for g, f, q in sweep.rows:
            w.writerow([f"{g:g}", f"{f:.6f}", "" if q is None else f"{q:.6f}"])
