"""``essvi`` command line: calibrate a chain, check a surface file, query a surface.

Exit codes: 0 success, 1 arbitrage found by ``check``, 2 unreadable or malformed
input, 3 forward/discount inference failure, 4 infeasible maturity, 5 I/O failure
on outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from essvi.calibration import CalibrationConfig, SliceObjective, calibrate_surface
from essvi.core import total_variance
from essvi.errors import (
    CalibrationInfeasibleError,
    ChainParseError,
    ForwardInferenceError,
    SliceBuildError,
    SurfaceFormatError,
    SurfaceValidationError,
)
from essvi.market_data import ChainFormat, build_slices, parse_chain
from essvi.no_arb import check_conditions, check_surface
from essvi.surface import LONG_TERM_RULES, EssviSurface, read_surface, serialize

EXIT_OK = 0
EXIT_ARBITRAGE = 1
EXIT_PARSE = 2
EXIT_PCP = 3
EXIT_INFEASIBLE = 4
EXIT_IO = 5

SURFACE_FILE = "surface.essvi"
MANIFEST_FILE = "manifest.json"
FIT_FILE = "fit.csv"
DROPPED_FILE = "dropped_rows.jsonl"
FIT_COLUMNS = ("T", "K", "k", "mid", "bid", "ask", "model_price", "abs_error_bp_of_F", "market_iv", "model_iv", "half_spread_bp")

log = logging.getLogger("essvi")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _DropCollector(logging.Handler):
    """Keeps the structured payload of every dropped-row warning."""

    def __init__(self) -> None:
        super().__init__(logging.WARNING)
        self.records: list[dict] = []

    def emit(self, record: logging.LogRecord) -> None:
        if hasattr(record, "reason"):
            self.records.append({key: getattr(record, key, None) for key in ("reason", "line", "expiry", "strike")})


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise _Fail(EXIT_PARSE, f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _Fail(EXIT_PARSE, f"config {path} is not valid JSON: {exc}") from exc
    unknown = set(cfg) - {"market", "calibration", "long_term_rule", "report_unit"}
    if unknown:
        raise _Fail(EXIT_PARSE, f"unknown config sections: {sorted(unknown)}")
    return cfg


def _resolve_settings(cfg: dict, args) -> tuple[ChainFormat, CalibrationConfig, str, str, list[str]]:
    """Merge file config and flags; return the settings and the keys that fell back to defaults."""
    cal = dict(cfg.get("calibration", {}))
    if args.n_rho is not None:
        cal["n_rho"] = args.n_rho
    if args.objective is not None:
        cal["objective"] = args.objective
    try:
        cal_cfg = CalibrationConfig.from_mapping(cal)
        fmt = ChainFormat.from_mapping(cfg.get("market", {}))
    except (TypeError, ValueError) as exc:
        raise _Fail(EXIT_PARSE, f"invalid config: {exc}") from exc
    rule = cfg.get("long_term_rule", "flat_atm_vol")
    if rule not in LONG_TERM_RULES:
        raise _Fail(EXIT_PARSE, f"unknown long_term_rule {rule!r}")
    unit = args.report_unit or cfg.get("report_unit", "forward")
    defaults = [f"calibration.{k}" for k in cal_cfg.to_dict() if k not in cal]
    defaults += [f"market.{k}" for k in ("columns", "expiry_format", "date_format", "valuation_date", "spot", "tick_size", "delimiter") if k not in cfg.get("market", {})]
    defaults += [k for k in ("long_term_rule", "report_unit") if k not in cfg and not (k == "report_unit" and args.report_unit)]
    return fmt, cal_cfg, rule, unit, defaults


def _fit_rows(slices, fits, unit: str, spot: float | None, objective: str) -> list[dict]:
    rows = []
    for sl, fit in zip(slices, fits):
        arr = sl.arrays
        model = SliceObjective(sl, objective).model_prices(fit.params)
        model_iv = np.sqrt(total_variance(arr["k"], fit.params) / sl.T)
        ref = sl.forward if unit == "forward" else spot
        for i in range(len(arr["k"])):
            rows.append(
                {
                    "T": sl.T,
                    "K": float(arr["strike"][i]),
                    "k": float(arr["k"][i]),
                    "mid": float(arr["mid"][i]),
                    "bid": float(arr["bid"][i]),
                    "ask": float(arr["ask"][i]),
                    "model_price": float(model[i]),
                    "abs_error_bp": 1e4 * abs(float(model[i]) - float(arr["mid"][i])) / ref,
                    "market_iv": float(arr["market_iv"][i]),
                    "model_iv": float(model_iv[i]),
                    "half_spread_bp": 1e4 * 0.5 * (float(arr["ask"][i]) - float(arr["bid"][i])) / ref,
                }
            )
    return rows


def _write_fit_csv(path: Path, rows: list[dict], unit: str) -> None:
    columns = list(FIT_COLUMNS)
    if unit == "spot":
        columns[columns.index("abs_error_bp_of_F")] = "abs_error_bp_of_S"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            values = [r[c] for c in ("T", "K", "k", "mid", "bid", "ask", "model_price", "abs_error_bp", "market_iv", "model_iv", "half_spread_bp")]
            writer.writerow([format(v, ".17g") for v in values])


def cmd_calibrate(args) -> int:
    t_start = time.perf_counter()
    cfg = _load_config(args.config)
    fmt, cal_cfg, rule, unit, defaults = _resolve_settings(cfg, args)
    collector = _DropCollector()
    md_logger = logging.getLogger("essvi.market_data")
    saved_level = md_logger.level
    # the dropped-row file must not depend on how verbose logging is configured
    md_logger.setLevel(logging.WARNING)
    md_logger.addHandler(collector)
    try:
        try:
            chain = parse_chain(args.chain, fmt)
        except ChainParseError as exc:
            raise _Fail(EXIT_PARSE, str(exc)) from exc
        try:
            slices = build_slices(chain)
        except ForwardInferenceError as exc:
            raise _Fail(EXIT_PCP, f"put-call parity inference failed: {exc}") from exc
        except SliceBuildError as exc:
            raise _Fail(EXIT_INFEASIBLE, str(exc)) from exc
    finally:
        md_logger.removeHandler(collector)
        md_logger.setLevel(saved_level)
    if unit == "spot" and chain.spot is None:
        raise _Fail(EXIT_PARSE, "--report-unit spot needs a spot price in the chain or config")
    t_prepared = time.perf_counter()
    try:
        fits = calibrate_surface(slices, cal_cfg)
    except CalibrationInfeasibleError as exc:
        raise _Fail(EXIT_INFEASIBLE, str(exc)) from exc
    t_calibrated = time.perf_counter()

    surface = EssviSurface.from_fits(slices, fits, chain.valuation_date, chain.spot, rule)
    rows = _fit_rows(slices, fits, unit, chain.spot, cal_cfg.objective)
    out = Path(args.out)
    outputs = {
        "surface": str(out / SURFACE_FILE),
        "fit_csv": str(out / FIT_FILE),
        "dropped_rows": str(out / DROPPED_FILE),
        "manifest": str(out / MANIFEST_FILE),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / SURFACE_FILE).write_bytes(serialize(surface))
        _write_fit_csv(out / FIT_FILE, rows, unit)
        with open(out / DROPPED_FILE, "w", encoding="utf-8") as fh:
            for rec in collector.records:
                fh.write(json.dumps(rec) + "\n")
        if args.figures:
            from essvi.plotting import plot_iv_fit, plot_price_errors

            outputs["iv_figure"] = str(out / "iv_fit.png")
            outputs["error_figure"] = str(out / "price_errors.png")
            plot_iv_fit(rows, out / "iv_fit.png")
            plot_price_errors(rows, out / "price_errors.png", "bp of F" if unit == "forward" else "bp of spot")
        summary = []
        for i, (sl, fit) in enumerate(zip(slices, fits)):
            errs = [r["abs_error_bp"] for r in rows if r["T"] == sl.T]
            summary.append(
                {
                    "index": i,
                    "T": sl.T,
                    "expiry": sl.expiry.isoformat() if sl.expiry else None,
                    "forward": sl.forward,
                    "discount": sl.discount,
                    "theta": fit.params.theta,
                    "rho": fit.params.rho,
                    "psi": fit.params.psi,
                    "objective": fit.objective_value,
                    "max_error_bp": max(errs),
                    "mean_error_bp": sum(errs) / len(errs),
                    "points": len(errs),
                }
            )
        manifest = {
            "inputs": {"chain": str(args.chain), "config": args.config},
            "config": {
                "market": {
                    **{k: v for k, v in vars(fmt).items() if k not in ("columns", "valuation_date")},
                    "columns": dict(fmt.columns),
                    "valuation_date": fmt.valuation_date.isoformat() if fmt.valuation_date else None,
                },
                "calibration": cal_cfg.to_dict(),
                "long_term_rule": rule,
                "report_unit": unit,
            },
            "defaults_applied": defaults,
            "valuation_date": chain.valuation_date.isoformat() if chain.valuation_date else None,
            "spot": chain.spot,
            "maturities": summary,
            "dropped_row_count": len(collector.records),
            "timing_seconds": {
                "prepare": t_prepared - t_start,
                "calibrate": t_calibrated - t_prepared,
                "total": time.perf_counter() - t_start,
            },
            "outputs": outputs,
        }
        with open(out / MANIFEST_FILE, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write outputs to {out}: {exc}") from exc
    print(f"calibrated {len(fits)} maturities in {t_calibrated - t_prepared:.3f} s; outputs in {out}")
    return EXIT_OK


def _read_surface_or_fail(path: str, validate: bool) -> EssviSurface:
    try:
        return read_surface(path, validate=validate)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read surface {path}: {exc}") from exc
    except SurfaceValidationError as exc:
        raise _Fail(EXIT_PARSE, str(exc)) from exc
    except (SurfaceFormatError, UnicodeDecodeError) as exc:
        raise _Fail(EXIT_PARSE, f"malformed surface file {path}: {exc}") from exc


def cmd_check(args) -> int:
    surface = _read_surface_or_fail(args.surface, validate=False)
    knots = check_conditions(surface.slices)
    samples = check_surface(surface)
    ok = knots.ok and samples.ok
    out = Path(args.out) if args.out else Path(str(args.surface) + ".report.json")
    try:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump({"ok": ok, "knots": knots.to_dict(), "samples": samples.to_dict()}, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write report {out}: {exc}") from exc
    for section, report in (("knots", knots), ("samples", samples)):
        for v in report.violations:
            print(f"{section}: {v.kind} at {v.location} (magnitude {v.magnitude:.3g})")
    print(f"{'no arbitrage found' if ok else 'arbitrage found'}; report in {out}")
    return EXIT_OK if ok else EXIT_ARBITRAGE


def cmd_query(args) -> int:
    if not args.t > 0:
        raise _Fail(EXIT_PARSE, "--t must be positive")
    surface = _read_surface_or_fail(args.surface, validate=True)
    p = surface.params_at(args.t)
    if args.strike is not None:
        if not args.strike > 0:
            raise _Fail(EXIT_PARSE, "--strike must be positive")
        k = math.log(args.strike / surface.forward_at(args.t))
    else:
        k = args.k
    w = float(total_variance(k, p))
    for name, value in (("t", args.t), ("k", k), ("w", w), ("sigma", math.sqrt(w / args.t)), ("theta", p.theta), ("rho", p.rho), ("psi", p.psi)):
        print(f"{name} {value:.17g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="essvi", description="Arbitrage-free eSSVI volatility surfaces.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log dropped rows and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="calibrate a surface from an option chain CSV")
    cal.add_argument("--chain", required=True, help="option chain CSV")
    cal.add_argument("--config", help="JSON config with 'market', 'calibration', 'long_term_rule', 'report_unit'")
    cal.add_argument("--out", required=True, help="output directory")
    cal.add_argument("--n-rho", type=int, help="correlation grid size per sweep")
    cal.add_argument("--objective", choices=("price_L1", "price_L2", "vol_L1"))
    cal.add_argument("--report-unit", choices=("forward", "spot"), help="basis-point unit of the fit report")
    cal.add_argument("--figures", action="store_true", help="also render PNG figures next to the fit CSV")
    cal.set_defaults(func=cmd_calibrate)

    chk = sub.add_parser("check", help="check a surface file for arbitrage")
    chk.add_argument("surface")
    chk.add_argument("--out", help="report path (default: <surface>.report.json)")
    chk.set_defaults(func=cmd_check)

    qry = sub.add_parser("query", help="evaluate a surface at one point")
    qry.add_argument("surface")
    qry.add_argument("--t", type=float, required=True, help="time to maturity in years")
    where = qry.add_mutually_exclusive_group(required=True)
    where.add_argument("--strike", type=float)
    where.add_argument("--k", type=float, help="log-forward moneyness")
    qry.set_defaults(func=cmd_query)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.ERROR)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    # the logger passes warnings on so dropped rows reach the collector; the console filters
    log.setLevel(logging.INFO)
    log.addHandler(console)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    finally:
        log.removeHandler(console)


if __name__ == "__main__":
    sys.exit(main())
