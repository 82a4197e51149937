"""Command-line front end.

Subcommands::

    nvdd scan-n          --config CFG --out DIR   relative contrast vs pulse count
    nvdd coherence       --config CFG --out DIR   coherence curves and T2 vs n
    nvdd calibrate       --config CFG --out DIR   fit the bath amplitude to a Hahn T2
    nvdd export-sequence PROTOCOL N --tau-us T --out FILE

Exit codes: 0 success, 2 configuration error, 3 calibration failure,
4 every fit failed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import config as cfgmod
from . import io
from .analysis import t2_vs_n
from .config import ConfigError
from .engine import contrast_vs_n_scan
from .noise import CalibrationError, calibrate_b_for_hahn_t2
from .sequences import (ErrorModel, PROTOCOLS, concatenated_xy8, cpmg, hahn, kdd_xy8, supports,
                        xy_family)
from .spinmath import to_angular

log = logging.getLogger("nvdd")

EXIT_OK, EXIT_CONFIG, EXIT_CALIBRATION, EXIT_FIT = 0, 2, 3, 4


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _load(args) -> dict:
    cfg = cfgmod.load(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.realizations is not None:
        cfg["n_realizations"] = args.realizations
    # thread count never changes results, so it is kept out of the hashed config
    cfg["threads"] = 1
    cfgmod.normalize(cfg)
    return cfg


def _threads(args, cfg) -> dict:
    run = dict(cfg)
    if args.threads is not None:
        run["threads"] = args.threads
    return run


def _write_manifest(out_dir: Path, command: str, cfg: dict, started: str, outputs) -> None:
    manifest = {
        "tool": "nvdd",
        "version": __version__,
        "command": command,
        "config_hash": cfgmod.config_hash(cfg),
        "config": cfg,
        "master_seed": cfg["seed"],
        "started_utc": started,
        "finished_utc": _now(),
        "outputs": sorted(Path(p).name for p in outputs),
    }
    io.write_json(manifest, out_dir / "manifest.json")


def _require_protocols(cfg: dict) -> list[str]:
    protocols = cfg.get("protocols")
    if not protocols:
        raise ConfigError("protocols: at least one protocol is required")
    return protocols


def cmd_scan_n(args) -> int:
    started = _now()
    cfg = _load(args)
    protocols = _require_protocols(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = _threads(args, cfg)
    base = cfgmod.experiment(run)
    t2_est = None if cfg["t2_estimate_ms"] is None else cfg["t2_estimate_ms"] * 1e-3
    rows = contrast_vs_n_scan(protocols, cfg["n_list"], base.tau, base, components=cfg["components"],
                              n_overrides=cfg["n_overrides"], t2_estimate=t2_est)
    path = io.write_scan_csv(rows, out / "contrast_vs_n.csv")
    _write_manifest(out, "scan-n", cfg, started, [path])
    return EXIT_OK


def cmd_coherence(args) -> int:
    started = _now()
    cfg = _load(args)
    protocols = _require_protocols(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = _threads(args, cfg)
    outputs, tables, n_ok, n_rows = [], [], 0, 0
    t2_path = out / "t2_vs_n.csv"
    with io.CsvWriter(t2_path, io.T2_COLUMNS) as w:
        for protocol in protocols:
            ns = _counts(cfg, protocol)
            for component in cfg["components"]:
                ec = cfgmod.experiment(run, protocol, component=component)
                if cfg["tau_list_us"] is not None:
                    # a fixed tau grid means a different total-time grid per n
                    table = _fixed_tau_table(protocol, ns, ec, [t * 1e-6 for t in cfg["tau_list_us"]])
                else:
                    table = t2_vs_n(protocol, ns, ec, t2_guess=cfg["t2_guess_ms"] * 1e-3,
                                    n_points=cfg["coherence_points"])
                tables.append(table)
                for row in table.rows:
                    n_rows += 1
                    w.row(io.t2_row_values(row))
                    if row.curve is not None:
                        p = out / f"curve_{protocol}_{component}_n{row.n}.csv"
                        outputs.append(io.write_curve_csv(row.curve, p))
                    n_ok += row.ok
    outputs.append(t2_path)
    outputs.append(io.write_json(io.t2_summary(tables), out / "t2_summary.json"))
    _write_manifest(out, "coherence", cfg, started, outputs)
    if n_rows and n_ok == 0:
        log.error("every fit failed")
        return EXIT_FIT
    return EXIT_OK


def _counts(cfg: dict, protocol: str) -> list[int]:
    # Hahn has a single pulse count, so the shared n grid does not apply to it
    default = [1] if protocol == "hahn" else cfg["n_list"]
    return [n for n in cfg["n_overrides"].get(protocol, default) if supports(protocol, n)]


def _fixed_tau_table(protocol, ns, ec, taus):
    from .analysis import FitError, T2Row, T2Table, fit_power_law, fit_stretched_exp
    from .engine import coherence_curve

    rows = []
    for n in ns:
        curve = coherence_curve(protocol, n, taus, ec)
        try:
            rows.append(T2Row(protocol, ec.initial_component, n, fit_stretched_exp(curve), curve))
        except FitError as exc:
            rows.append(T2Row(protocol, ec.initial_component, n, None, curve, str(exc)))
    good = [r for r in rows if r.ok]
    law = fit_power_law([r.n for r in good], [r.fit.t2 for r in good]) if len(good) >= 2 else None
    return T2Table(tuple(rows), law)


def cmd_calibrate(args) -> int:
    started = _now()
    cfg = _load(args)
    target, tau_c, mc = cfgmod.calibration(cfg)
    if args.threads is not None:
        mc = replace(mc, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = calibrate_b_for_hahn_t2(target, tau_c, mc)
    except CalibrationError as exc:
        log.error("calibration failed: %s", exc)
        return EXIT_CALIBRATION
    doc = {
        "b_rad_s": res.b,
        "b_khz": res.b / to_angular(1.0) / 1e3,
        "tau_c_ms": res.tau_c * 1e3,
        "target_t2_ms": res.target_t2 * 1e3,
        "achieved_t2_ms": res.achieved_t2 * 1e3,
        "iterations": res.iterations,
        "seed": res.master_seed,
        "n_realizations": res.n_realizations,
    }
    path = io.write_json(doc, out / "bath_calibrated.json")
    _write_manifest(out, "calibrate", cfg, started, [path])
    return EXIT_OK


def _parse_count(protocol: str, text: str) -> int:
    if "=" in text:
        key, _, text = text.partition("=")
        if key.strip() not in ("n", "level", "n_base"):
            raise ValueError(f"unknown count keyword {key!r}")
    return int(text)


def build_from_cli(protocol: str, count: int, tau: float, em: ErrorModel):
    """Builder dispatch using each builder's own count (KDD: base pulses, CXY8: level)."""
    key = protocol.lower()
    if key == "hahn":
        return hahn(tau, em)
    if key == "cpmg":
        return cpmg(count, tau, em)
    if key in ("xy4", "xy8", "xy16"):
        return xy_family(key, count, tau, em)
    if key == "kdd_xy8":
        return kdd_xy8(count, tau, em)
    if key == "cxy8":
        return concatenated_xy8(count, tau, em)
    raise ValueError(f"unknown protocol {protocol!r}; expected one of {list(PROTOCOLS)}")


def cmd_export_sequence(args) -> int:
    try:
        count = _parse_count(args.protocol, args.count)
        em = ErrorModel(args.epsilon, args.n_z)
        program = build_from_cli(args.protocol, count, args.tau_us * 1e-6, em)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_pulse_csv(program, out)
    return EXIT_OK


def _run_flags(p: argparse.ArgumentParser, need_out: bool = True) -> None:
    p.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
    p.add_argument("--out", default="." if not need_out else None, required=need_out, metavar="DIR",
                   help="output directory")
    p.add_argument("--seed", type=int, metavar="U64", help="override the configured master seed")
    p.add_argument("--realizations", type=int, metavar="N", help="override n_realizations")
    p.add_argument("--threads", type=int, metavar="N", help="worker threads (0 = auto); results do not change")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvdd", description="Dynamical-decoupling simulations for NV spins")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan-n", help="Hahn-normalized contrast vs number of pulses")
    _run_flags(p)
    p.set_defaults(func=cmd_scan_n)

    p = sub.add_parser("coherence", help="coherence curves and stretched-exponential T2 vs n")
    _run_flags(p)
    p.set_defaults(func=cmd_coherence)

    p = sub.add_parser("calibrate", help="find the bath amplitude reproducing a Hahn-echo T2")
    _run_flags(p, need_out=False)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("export-sequence", help="write a protocol's pulse list as CSV")
    p.add_argument("protocol", choices=PROTOCOLS)
    p.add_argument("count", nargs="?", default="1",
                   help="builder count: pulses (cpmg, xy*), base XY8 pulses (kdd_xy8) or level (cxy8)")
    p.add_argument("--tau-us", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--n-z", type=float, default=0.0)
    p.add_argument("--out", required=True, metavar="FILE")
    p.set_defaults(func=cmd_export_sequence)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for attr in ("seed", "realizations", "threads"):
        value = getattr(args, attr, None)
        if value is not None and value < 0:
            print(f"error: --{attr} must be non-negative", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error in {getattr(args, 'config', '?')}:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
