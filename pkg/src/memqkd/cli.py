"""Command-line entry point: ``python3 -m memqkd <command>``.

Exit codes: 0 success, 1 other protocol failure, 2 QBER abort,
3 authentication failure, 4 key-confirmation mismatch, 5 configuration
error, 6 time budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import certify as cf
from .config import ConfigError, RunConfig, load
from .figures import FIGURES, write_figure
from .peers.frames import ProtocolError
from .peers.session import PeerResult, SessionResult, party_rng, run_peer, run_session
from .peers.transport import SocketTransport, TransportClosed, parse_addr
from .photstat import correlate, noise_correct, read_timetags, simulate_hbt, write_histogram

log = logging.getLogger("memqkd")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 5


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, (bytes, bytearray)):
        return o.hex()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def bits_text(bits) -> str:
    return "".join(map(str, np.asarray(bits, dtype=np.uint8).tolist())) + "\n"


def _read_psk(path: str | None, required: bool) -> bytes | None:
    if path is None:
        if required:
            raise ConfigError("socket mode needs --psk-file with a 32-byte authentication key")
        return None
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read PSK file: {exc}") from None
    text = data.strip()
    if len(data) != 32:
        try:
            data = bytes.fromhex(text.decode())
        except ValueError:
            pass
    if len(data) != 32:
        raise ConfigError("PSK file must hold 32 raw bytes or 64 hex digits")
    return data


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "out": getattr(args, "out", None)}
    if getattr(args, "target_sifted_bits", None) is not None:
        overrides["target_sifted_bits"] = args.target_sifted_bits
    return load(args.config, overrides)


# keygen ---------------------------------------------------------------------

def _peer_report(p: PeerResult) -> dict:
    rep = SessionResult(p, p).report()
    rep["role"] = p.role
    rep.pop("keys_match")
    return rep


def cmd_keygen(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    socket_mode = args.listen or args.connect
    psk = _read_psk(args.psk_file, required=bool(socket_mode))
    if socket_mode:
        return _keygen_socket(args, cfg, out, psk)
    try:
        res = run_session(cfg.session, psk=psk, mode=cfg.randomness)
    except ProtocolError as exc:
        partial = getattr(exc, "session", None)
        report = partial.report() if partial is not None else {}
        report.update({"status": exc.kind, "error": str(exc)})
        write_json(out / "report.json", report)
        log.error("session failed: %s", exc)
        return exc.code
    report = res.report()
    write_json(out / "report.json", report)
    (out / "key_alice.txt").write_text(bits_text(res.alice.final_key))
    (out / "key_bob.txt").write_text(bits_text(res.bob.final_key))
    log.info("n_key=%d qber=%.4f f_r=%s", res.n_key, res.qber_total, report["reconciliation"]["f_r"])
    return EXIT_OK if res.keys_match and res.n_key > 0 else EXIT_FAIL


def _keygen_socket(args, cfg: RunConfig, out: Path, psk: bytes) -> int:
    if args.listen and args.connect:
        raise ConfigError("use either --listen or --connect, not both")
    role = "bob" if args.listen else "alice"
    host, port = parse_addr(args.listen or args.connect)
    try:
        if role == "bob":
            transport = SocketTransport.listen(host, port, ready=lambda p: log.info("listening on %s:%d", host, p))
        else:
            transport = SocketTransport.connect(host, port)
    except OSError as exc:
        log.error("cannot open socket: %s", exc)
        return EXIT_FAIL
    rng = party_rng(cfg.randomness, cfg.seed, role)
    try:
        res = run_peer(role, cfg.session, transport, rng, psk)
    except ProtocolError as exc:
        partial = getattr(exc, "result", None)
        report = _peer_report(partial) if partial is not None else {}
        report.update({"status": exc.kind, "error": str(exc)})
        write_json(out / f"report_{role}.json", report)
        log.error("session failed: %s", exc)
        return exc.code
    except (TransportClosed, OSError) as exc:
        log.error("transport failed: %s", exc)
        return EXIT_FAIL
    write_json(out / f"report_{role}.json", _peer_report(res))
    (out / f"key_{role}.txt").write_text(bits_text(res.final_key))
    return EXIT_OK if len(res.final_key) > 0 else EXIT_FAIL


# other commands -------------------------------------------------------------

def cmd_figures(args) -> int:
    cfg = _config(args)
    which = args.which or list(FIGURES)
    for w in which:
        if w not in FIGURES:
            raise ConfigError(f"unknown figure {w!r}; choose from {', '.join(FIGURES)}")
    points = args.points or cfg.points
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for w in which:
            path = write_figure(w, Path(cfg.out), cfg.channel, points, cfg.seed)
            print(path)
    return EXIT_OK


def cmd_certify(args) -> int:
    try:
        counts = cf.ChshCounts.from_json(json.loads(Path(args.counts).read_text()))
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"malformed counts file: {exc}") from None
    if not 0 < args.delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    cert = cf.certify(counts, args.delta, args.n, args.q)
    data = cert.to_json()
    data["certified"] = cert.h_min_finite > 0
    text = json.dumps(data, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "certificate.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_g2(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    if args.timetags:
        try:
            a, b = read_timetags(args.timetags, 1e9 / args.rep_rate_hz)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read time tags: {exc}") from None
    else:
        a, b = simulate_hbt(args.source, args.rep_rate_hz, args.pulses / args.rep_rate_hz, rng,
                            args.dark_a, args.dark_b, args.efficiency)
    hist = correlate(a, b, args.bin_ns)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        corrected = noise_correct(hist, args.dark_a, args.dark_b,
                                  max(a.rate_hz - args.dark_a, 0.0), max(b.rate_hz - args.dark_b, 0.0))
    summary = {"g2_zero_raw": hist.g2_zero, "g2_zero_sigma_raw": hist.g2_zero_sigma,
               "g2_zero": corrected.g2_zero, "g2_zero_sigma": corrected.g2_zero_sigma,
               "side_peaks": corrected.side_peaks, "floored": corrected.floored,
               "rate_a_hz": a.rate_hz, "rate_b_hz": b.rate_hz}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_histogram(out / "g2_histogram.csv", corrected)
        write_json(out / "g2_summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    """Answer one session as the responder on ``--listen``."""
    args.connect = None
    if not args.listen:
        raise ConfigError("serve needs --listen host:port")
    return cmd_keygen(args)


def build_parser() -> argparse.ArgumentParser:
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", help="log progress")
    p = argparse.ArgumentParser(prog="memqkd", description="Memory-based entanglement QKD toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[verbose], **kw)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="physics and replay seed")
        if out:
            sp.add_argument("--out", help="output directory")

    kg = add("keygen", help="run a key-generation session")
    common(kg)
    kg.add_argument("--listen", metavar="HOST:PORT", help="act as Bob and wait for a peer")
    kg.add_argument("--connect", metavar="HOST:PORT", help="act as Alice and dial a peer")
    kg.add_argument("--psk-file", help="32-byte authentication key (required with sockets)")
    kg.add_argument("--target-sifted-bits", type=int)
    kg.set_defaults(func=cmd_keygen)

    sv = add("serve", help="answer one session on --listen")
    common(sv)
    sv.add_argument("--listen", metavar="HOST:PORT", required=True)
    sv.add_argument("--psk-file", required=True)
    sv.add_argument("--target-sifted-bits", type=int)
    sv.set_defaults(func=cmd_serve)

    fg = add("figures", help="write figure datasets as CSV")
    common(fg)
    fg.add_argument("--which", nargs="+", help=f"subset of {', '.join(FIGURES)}")
    fg.add_argument("--points", type=int)
    fg.set_defaults(func=cmd_figures)

    ce = add("certify", help="certificate from CHSH counts")
    ce.add_argument("--counts", required=True, help="JSON counts file")
    ce.add_argument("--delta", type=float, default=0.01)
    ce.add_argument("--n", type=int, required=True, help="key length to certify")
    ce.add_argument("--q", type=float, default=0.25)
    ce.add_argument("--out")
    ce.set_defaults(func=cmd_certify)

    g2 = add("g2", help="second-order correlation of a time-tag file or a simulated source")
    g2.add_argument("--timetags", help="CSV with detector,timestamp_ns")
    g2.add_argument("--source", default="single_photon", choices=["single_photon", "coherent", "two_photon"])
    g2.add_argument("--rep-rate-hz", type=float, default=17e3)
    g2.add_argument("--pulses", type=int, default=30_000_000)
    g2.add_argument("--efficiency", type=float, default=0.01)
    g2.add_argument("--dark-a", type=float, default=0.0)
    g2.add_argument("--dark-b", type=float, default=0.0)
    g2.add_argument("--bin-ns", type=float, default=200.0)
    g2.add_argument("--seed", type=int)
    g2.add_argument("--out")
    g2.set_defaults(func=cmd_g2)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
