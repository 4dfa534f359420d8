"""Datasets behind the result figures, written as CSV (no plotting)."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import certify as cf
from .memqubit import CLOCK, MEASURED_BUDGET, UPDOWN, storage_table, write_storage_csv
from .photstat import correlate, gate_sweep, noise_correct, simulate_hbt, simulate_sweep_rounds, write_histogram, write_sweep
from .physchan import TIMING_PRESETS, ChannelParams, sifted_rate_model

FIGURES = ("rate_vs_loss", "gate_sweep", "g2", "qber_vs_storage", "hmin_vs_g", "hmin_vs_k")


def _write(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])
    return path


def rate_vs_loss(channel: ChannelParams, losses) -> list[tuple]:
    rows = []
    for loss in losses:
        ch = channel.with_(loss_db=float(loss))
        rates = [sifted_rate_model(ch, TIMING_PRESETS[k])[0] for k in ("current", "passive", "optimized")]
        rows.append((float(loss), *rates, sifted_rate_model(ch, TIMING_PRESETS["current"])[1]))
    return rows


def hmin_vs_g(gs) -> list[tuple]:
    rows = []
    for g in gs:
        g = float(min(g, cf.TSIRELSON))
        h = cf.min_entropy(g)
        rows.append((g, cf.guessing_bound(g), h, cf.block_size(h) if h > 0 else ""))
    return rows


def hmin_vs_k(points: int, g: float = 2.33, deltas=(0.01, 0.05, 0.1)) -> list[tuple]:
    rows = []
    for k in np.unique(np.logspace(3, 7, points).astype(int)):
        rows.append((int(k), *[cf.min_entropy_finite(g, int(k), d) for d in deltas]))
    return rows


def write_figure(which: str, out: Path, channel: ChannelParams | None = None, points: int = 41,
                 seed: int = 0) -> Path:
    """Write one figure dataset into directory ``out`` and return its path."""
    if which not in FIGURES:
        raise ValueError(f"unknown figure {which!r}; choose from {', '.join(FIGURES)}")
    channel = channel or ChannelParams()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{which}.csv"
    rng = np.random.default_rng(seed)
    if which == "rate_vs_loss":
        losses = np.linspace(0.0, 40.0, points)
        if 26.0 not in losses:
            losses = np.sort(np.append(losses, 26.0))
        return _write(path, ["loss_db", "rate_current_hz", "rate_passive_hz", "rate_optimized_hz", "bits_per_use"],
                      rate_vs_loss(channel, losses))
    if which == "gate_sweep":
        contrast = 0.5 * (MEASURED_BUDGET.static_contrast("z") + MEASURED_BUDGET.static_contrast("y"))
        rounds = simulate_sweep_rounds(2_000_000, channel, contrast, rng)
        widths = np.linspace(1.0, channel.record_window_ns, points)
        write_sweep(path, gate_sweep(rounds, widths, channel))
        return path
    if which == "g2":
        dark = 5.0
        a, b = simulate_hbt("single_photon", 17e3, 3e7 / 17e3, rng, dark, dark, 0.01, profile=channel.profile)
        hist = correlate(a, b, 200.0)
        hist = noise_correct(hist, dark, dark, max(a.rate_hz - dark, 0.0), max(b.rate_hz - dark, 0.0))
        write_histogram(path, hist)
        return path
    if which == "qber_vs_storage":
        times = np.linspace(0.0, 3000.0, points)
        if 1200.0 not in times:
            times = np.sort(np.append(times, 1200.0))
        write_storage_csv(path, storage_table(times, MEASURED_BUDGET, UPDOWN, CLOCK))
        return path
    if which == "hmin_vs_g":
        # The measured value 2.33 always gets its own row.
        gs = np.unique(np.append(np.linspace(2.0, cf.TSIRELSON, points), 2.33))
        return _write(path, ["g", "p_guess", "h_min", "block_size"], hmin_vs_g(gs))
    return _write(path, ["k", "h_min_delta_0.01", "h_min_delta_0.05", "h_min_delta_0.1"], hmin_vs_k(points))

