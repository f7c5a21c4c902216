"""Command-line front end.

Every run writes its outputs plus a ``manifest.json`` into one output
directory. The manifest holds the resolved configuration and the sha256 of
each input and output, and ``lobflow rerun`` replays it.

Exit codes: 0 success, 1 data error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .hawkes import FitError, compare_flows, flow_series, write_comparisons
from .lob import BookError, quotes_to_eventflow, write_events
from .matcher import MatchConfig, build_report, export_flow, match
from .signer import DAILY_LAG_GRID, optimal_lag, read_performance, sweep, write_optimal_lags, write_performance
from .skellam import CalibrationError, SkellamParams, calibrate, model_curve, write_curve
from .synthgen import dump_scenario, load_scenario, parse_lag_density, render, simulate
from .tickdata import ParseError, read_quotes, read_trades

log = logging.getLogger("lobflow")

OUT_ENV = "LOBFLOW_OUT"
MANIFEST = "manifest.json"
MANIFEST_SCHEMA = 1


class ConfigError(ValueError):
    pass


class Output:
    """Writes confined to one directory."""

    def __init__(self, root):
        self.root = Path(root).resolve()
        self.files: dict[str, str] = {}

    def write(self, name: str, data: bytes | str) -> Path:
        if isinstance(data, str):
            data = data.encode("utf-8")
        path = (self.root / name).resolve()
        if not path.is_relative_to(self.root):
            raise ConfigError(f"refusing to write outside {self.root}: {name}")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.files[path.relative_to(self.root).as_posix()] = sha256(data)
        return path


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def parse_lag_grid(text: str) -> list[float]:
    """Comma list (``-1,0,0.5``) or inclusive range ``start:stop:step``."""
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            n = int(round((b - a) / step)) + 1
            return [round(a + i * step, 9) for i in range(n)]
        grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad lag grid {text!r}") from None
    if not grid:
        raise ConfigError("empty lag grid")
    return grid


# -- per-day work (top level so it pickles for --jobs) --------------------------------

def _load_day(trades_path: str, quotes_path: str, depth: int):
    trades = read_trades(trades_path)
    flow = quotes_to_eventflow(read_quotes(quotes_path, depth), depth)
    return trades, flow


def _match_day(job):
    trades_path, quotes_path, depth, cfg = job
    trades, flow = _load_day(trades_path, quotes_path, depth)
    res = match(trades, flow, cfg)
    rep = build_report(res)
    return export_flow(res), rep.to_json(), rep.histograms_csv()


def _sign_day(job):
    trades_path, quotes_path, depth, cfg, grid = job
    trades, flow = _load_day(trades_path, quotes_path, depth)
    res = match(trades, flow, cfg)
    return sweep(trades, flow.tops, res, grid)


def _report_day(job):
    trades_path, quotes_path, depth, cfg = job
    trades, flow = _load_day(trades_path, quotes_path, depth)
    rows = []
    for proc in ("M1", "M2", "M3"):
        c = MatchConfig(cfg.delta, cfg.max_batch, cfg.batch_window if proc == "M3" else 0.0, proc)
        res = match(trades, flow, c)
        rows.append((proc, len(trades), res.matched_trades))
    return rows


def _hawkes_day(job):
    trades_path, quotes_path, depth, cfg, models, min_events = job
    trades, flow = _load_day(trades_path, quotes_path, depth)
    res = match(trades, flow, cfg)
    fs = flow_series(trades, flow.events, res)
    return [compare_flows(fs.raw_trades, fs.matched_flow, m, fs.raw_cancels, fs.matched_cancels, min_events)
            for m in models]


def _simulate_seed(job):
    scenario_text, seed = job
    flow_p, art = load_scenario(scenario_text)
    flow_p.seed = seed
    truth = simulate(flow_p)
    feed = render(truth, art, seed=seed)
    return (feed.trades_bytes(), feed.quotes_bytes(), feed.labels_bytes(),
            write_events(truth.events), dump_scenario(flow_p, art))


def _pmap(fn, jobs, n_jobs: int):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, jobs))


# -- config resolution ---------------------------------------------------------------

def _match_config(args) -> MatchConfig:
    try:
        return MatchConfig(args.delta, args.max_batch, args.batch_window, args.procedure)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _days(args) -> list[tuple[str, str, str]]:
    if len(args.trades) != len(args.quotes):
        raise ConfigError("--trades and --quotes need the same number of files")
    dates = args.dates or [Path(t).stem for t in args.trades]
    if len(dates) != len(args.trades):
        raise ConfigError("--dates must match the number of input files")
    if len(set(dates)) != len(dates):
        raise ConfigError("day labels must be distinct")
    return list(zip(dates, args.trades, args.quotes))


def _inputs(*paths) -> dict[str, str]:
    out = {}
    for p in paths:
        out[str(Path(p).resolve())] = sha256(Path(p).read_bytes())
    return out


# -- subcommands ---------------------------------------------------------------------

def cmd_match(args, out: Output) -> dict:
    cfg = _match_config(args)
    days = _days(args)
    inputs = _inputs(*args.trades, *args.quotes)
    results = _pmap(_match_day, [(t, q, args.depth, cfg) for _, t, q in days], args.jobs)
    single = len(days) == 1
    for (date, _, _), (flow_csv, rep, hist) in zip(days, results):
        prefix = "" if single else f"{date}/"
        out.write(prefix + "flow.csv", flow_csv)
        out.write(prefix + "report.json", rep)
        out.write(prefix + "histograms.csv", hist)
    return inputs


def cmd_sign(args, out: Output) -> dict:
    cfg = _match_config(args)
    grid = parse_lag_grid(args.lag_grid) if args.lag_grid else list(DAILY_LAG_GRID)
    days = _days(args)
    inputs = _inputs(*args.trades, *args.quotes)
    perfs = _pmap(_sign_day, [(t, q, args.depth, cfg, grid) for _, t, q in days], args.jobs)
    single = len(days) == 1
    for (date, _, _), perf in zip(days, perfs):
        out.write("performance.csv" if single else f"{date}/performance.csv", write_performance(perf))
    out.write("optimal_lags.csv", write_optimal_lags([(d, optimal_lag(p)) for (d, _, _), p in zip(days, perfs)]))
    return inputs


def cmd_report(args, out: Output) -> dict:
    cfg = _match_config(args)
    days = _days(args)
    inputs = _inputs(*args.trades, *args.quotes)
    tables = _pmap(_report_day, [(t, q, args.depth, cfg) for _, t, q in days], args.jobs)
    lines = ["date,procedure,total_trades,matched_trades,matched_fraction"]
    doc = {"schema_version": MANIFEST_SCHEMA, "config": asdict(cfg), "days": {}}
    for (date, _, _), rows in zip(days, tables):
        doc["days"][date] = {}
        for proc, total, matched in rows:
            frac = matched / total if total else None
            lines.append(f"{date},{proc},{total},{matched},{'' if frac is None else f'{frac:.6f}'}")
            doc["days"][date][proc] = {"total_trades": total, "matched_trades": matched, "matched_fraction": frac}
    out.write("matching_table.csv", "\n".join(lines) + "\n")
    out.write("report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return inputs


def cmd_hawkes(args, out: Output) -> dict:
    cfg = _match_config(args)
    days = _days(args)
    models = [m.upper() for m in args.model]
    inputs = _inputs(*args.trades, *args.quotes)
    comps = _pmap(_hawkes_day, [(t, q, args.depth, cfg, models, args.min_events) for _, t, q in days], args.jobs)
    rows = [(date, c) for (date, _, _), cs in zip(days, comps) for c in cs]
    out.write("comparisons.csv", write_comparisons(rows))
    meta = {"schema_version": MANIFEST_SCHEMA,
            "ties": "tied timestamps spread by 1 microsecond steps",
            "optimizer": "L-BFGS-B on log-parameters, 8 starting points, best log-likelihood kept",
            "raw_series": "distinct trade timestamps", "matched_series": "MARKET events after matching",
            "cancellations": "CANCEL events at the best level"}
    out.write("hawkes_metadata.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return inputs


def _skellam_params(args) -> SkellamParams:
    try:
        return SkellamParams(args.lc_plus, args.lc_minus, args.m_plus, args.m_minus, args.rho_agg)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_skellam(args, out: Output) -> dict:
    params = _skellam_params(args)
    try:
        f_delta = parse_lag_density(args.lag_density)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    grid = parse_lag_grid(args.lag_grid)
    inputs = {}
    if args.calibrate:
        inputs = _inputs(args.calibrate)
        perf = read_performance(Path(args.calibrate).read_bytes())
        pts = [(p.lag, p.accuracy) for p in perf if p.accuracy is not None]
        cal = calibrate(pts, f_delta, params)
        out.write("calibration.json", cal.to_json())
        params = cal.params
    out.write("curve.csv", write_curve(model_curve(params, f_delta, grid)))
    return inputs


def cmd_simulate(args, out: Output) -> dict:
    inputs = {}
    text = ""
    if args.scenario:
        inputs = _inputs(args.scenario)
        text = Path(args.scenario).read_text()
    try:
        flow_p, _ = load_scenario(text)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"bad scenario: {e}") from None
    seeds = args.seed if args.seed else [flow_p.seed]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    feeds = _pmap(_simulate_seed, [(text, s) for s in seeds], args.jobs)
    for seed, (tr, qu, lab, ev, scen) in zip(seeds, feeds):
        d = f"seed_{seed}/"
        out.write(d + "trades.csv", tr)
        out.write(d + "quotes.csv", qu)
        out.write(d + "labels.csv", lab)
        out.write(d + "events.csv", ev)
        out.write(d + "scenario.ini", scen)
    return inputs


COMMANDS = {"match": cmd_match, "sign": cmd_sign, "report": cmd_report, "hawkes": cmd_hawkes,
            "skellam": cmd_skellam, "simulate": cmd_simulate}


# -- argument parsing ----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./lobflow_out)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers across days/seeds")


def _add_days(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trades", nargs="+", required=True, help="trades file(s), one per instrument-day")
    p.add_argument("--quotes", nargs="+", required=True, help="quotes file(s), same order as --trades")
    p.add_argument("--dates", nargs="+", help="day labels (default: trades file stems)")
    p.add_argument("--depth", type=int, default=10, help="book depth in the quotes file")


def _add_match(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, default=0.4, help="matching half-window (s)")
    p.add_argument("--max-batch", type=int, default=9, help="max trade lines per batch")
    p.add_argument("--batch-window", type=float, default=0.005, help="max timestamp spread in a batch (s)")
    p.add_argument("--procedure", choices=("M1", "M2", "M3"), default="M3")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lobflow", description="Order flow reconstruction from trades and quotes.")
    parser.add_argument("--version", action="version", version=f"lobflow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="match trades to the quote-derived flow")
    _add_days(p)
    _add_match(p)
    _add_common(p)

    p = sub.add_parser("sign", help="Lee-Ready accuracy against matched signs over a lag grid")
    _add_days(p)
    _add_match(p)
    p.add_argument("--lag-grid", help="lags in seconds: 'a,b,c' or 'start:stop:step' (default: daily grid)")
    _add_common(p)

    p = sub.add_parser("report", help="matched fractions for M1, M2 and M3")
    _add_days(p)
    _add_match(p)
    _add_common(p)

    p = sub.add_parser("hawkes", help="Hawkes fits on raw trades vs matched flow")
    _add_days(p)
    _add_match(p)
    p.add_argument("--model", nargs="+", choices=("SELF", "CROSS", "self", "cross"), default=["SELF", "CROSS"])
    p.add_argument("--min-events", type=int, default=100)
    _add_common(p)

    p = sub.add_parser("skellam", help="model accuracy curve, optionally calibrated to a performance CSV")
    p.add_argument("--lc-plus", type=float, default=5.0)
    p.add_argument("--lc-minus", type=float, default=5.0)
    p.add_argument("--m-plus", type=float, default=1.0)
    p.add_argument("--m-minus", type=float, default=1.0)
    p.add_argument("--rho-agg", type=float, default=0.6)
    p.add_argument("--lag-density", default="dirac:1", help="dirac:x | gaussian:mean,sd | uniform:a,b | empirical:edges;counts")
    p.add_argument("--lag-grid", default="-0.5:2.5:0.01")
    p.add_argument("--calibrate", metavar="PERF_CSV", help="fit the parameters to a sign performance CSV first")
    _add_common(p)

    p = sub.add_parser("simulate", help="synthetic trades/quotes feed with ground-truth labels")
    p.add_argument("--scenario", help="key = value scenario file (default: built-in defaults)")
    p.add_argument("--seed", type=int, nargs="+", help="seed(s); overrides the scenario seed")
    _add_common(p)

    p = sub.add_parser("rerun", help="re-execute a manifest and compare output hashes")
    p.add_argument("manifest")
    p.add_argument("--out", help="directory for the replay (default: the manifest's own directory)")
    return parser


def _resolve_out(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "lobflow_out")


def _config_dict(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("out", "verbose")}
    for key in ("trades", "quotes"):
        if cfg.get(key):
            cfg[key] = [str(Path(p).resolve()) for p in cfg[key]]
    for key in ("scenario", "calibrate"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    return cfg


def execute(config: dict, out_dir: Path) -> dict:
    """Run one resolved configuration and write its manifest; returns the manifest."""
    args = argparse.Namespace(**config)
    out = Output(out_dir)
    inputs = COMMANDS[config["command"]](args, out)
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "tool": f"lobflow {__version__}",
        "config": config,
        "inputs": inputs,
        "outputs": dict(sorted(out.files.items())),
    }
    out.write(MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def rerun(manifest_path: str, out_dir: str | None) -> int:
    path = Path(manifest_path)
    try:
        manifest = json.loads(path.read_text())
        config = manifest["config"]
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"unreadable manifest: {e}") from None
    if manifest.get("schema_version") != MANIFEST_SCHEMA:
        raise ConfigError("unsupported manifest schema")
    for p, h in manifest.get("inputs", {}).items():
        if sha256(Path(p).read_bytes()) != h:
            log.error("input changed since the original run: %s", p)
            return 1
    target = Path(out_dir) if out_dir else path.parent
    replay = execute(config, target)
    bad = [k for k, h in manifest["outputs"].items() if replay["outputs"].get(k) != h]
    bad += [k for k in replay["outputs"] if k not in manifest["outputs"] and k != MANIFEST]
    for k in bad:
        log.error("output differs: %s", k)
    if not bad:
        print(f"{len(manifest['outputs'])} outputs identical")
    return 1 if bad else 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            return rerun(args.manifest, args.out)
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be >= 1")
        out_dir = _resolve_out(args)
        manifest = execute(_config_dict(args), out_dir)
        print(f"wrote {len(manifest['outputs'])} files to {out_dir}")
        return 0
    except ConfigError as e:
        print(f"lobflow: config error: {e}", file=sys.stderr)
        return 2
    except (ParseError, BookError, FitError, CalibrationError, OSError, ValueError) as e:
        print(f"lobflow: data error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
