"""Command-line front end: single runs, strategy sweeps and summary reports.

Every report is computed from files a run wrote to disk (``rounds.csv``,
plus ``timings.csv`` for wall-clock stage times), never from in-memory
state, so ``report`` can be pointed at any directory of finished runs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .config import FLConfig, load_config, parse_strategy
from .errors import ConfigError, FedcastError
from .evaluation import export_histograms
from .fl_runtime import STAGES, ExperimentResult, run_experiment
from .tensor_core import save

log = logging.getLogger(__name__)

ROUND_COLUMNS = ("round", "strategy", "mode", "warm", "theta", "l_val", "bleu", "token_acc",
                 "saving_mean", "bytes_round", "t_local", "t_select", "t_maml", "t_send", "t_agg",
                 "dloss_dtheta", "meta_l_val")
SUMMARY_METRICS = ("bleu", "l_val", "saving", "bytes")
DEFAULT_STRATEGIES = ("send_all", "rand_send", "dp_g", "dp_l", "metasend_g", "metasend_l",
                      "fixed_threshold_g", "fixed_threshold_l", "random_threshold_g",
                      "random_threshold_l")
CHECKPOINT = "final.fcast"
SEED_ENV = "FEDCAST_SEED"


def _num(x: float | None) -> str:
    if x is None:
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".17g")


# -- writing a run -----------------------------------------------------------

def rounds_csv(result: ExperimentResult) -> str:
    """``rounds.csv`` text. Stage times are left blank unless ``timing_in_csv``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUND_COLUMNS)
    timed = result.config.timing_in_csv
    for rec in result.records:
        times = [_num(rec.timings[s]) if timed else "" for s in ("local", "select", "maml", "send", "agg")]
        w.writerow([rec.round, rec.strategy, rec.mode, int(rec.warm), _num(rec.theta), _num(rec.l_val),
                    f"{100 * rec.bleu:.2f}", _num(rec.token_acc), _num(rec.saving_mean), rec.bytes_round,
                    *times, _num(rec.dloss_dtheta), _num(rec.meta_l_val)])
    return buf.getvalue()


def timings_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("round",) + tuple(f"t_{s}" for s in STAGES))
    for rec in result.records:
        w.writerow([rec.round] + [_num(rec.timings[s]) for s in STAGES])
    return buf.getvalue()


def write_run(result: ExperimentResult, out: str | Path) -> Path:
    """Write every per-run artifact into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    (out / "rounds.csv").write_text(rounds_csv(result), encoding="utf-8")
    (out / "timings.csv").write_text(timings_csv(result), encoding="utf-8")
    records = [rec.to_dict() for rec in result.records]
    (out / "records.json").write_text(json.dumps(records, indent=1, allow_nan=True) + "\n", encoding="utf-8")
    (out / "ledger.json").write_text(json.dumps(result.ledger.to_dict(), indent=1) + "\n", encoding="utf-8")
    save(result.final, out / CHECKPOINT)
    if result.config.export_histograms and result.profiles:
        export_histograms(result.profiles, out / "histograms")
    return out


def apply_seed_env(config: FLConfig, env: Mapping[str, str] | None = None) -> FLConfig:
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV)
    if raw is None or raw == "":
        return config
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return config.replace(seed=seed).validate()


def run_to_dir(config: FLConfig, out: str | Path) -> Path:
    return write_run(run_experiment(config), out)


# -- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    base: FLConfig
    strategies: tuple[str, ...] = DEFAULT_STRATEGIES
    seeds: tuple[int, ...] = (0,)
    out: Path | None = None

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("sweep needs at least one strategy")
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")
        for s in self.strategies:
            parse_strategy(s)

    def runs(self) -> list[tuple[str, FLConfig]]:
        """``(directory name, config)`` for every strategy × seed, in sweep order."""
        out = []
        for strat in self.strategies:
            kind, mode = parse_strategy(strat)
            for seed in self.seeds:
                cfg = self.base.replace(strategy=kind, mode=mode or self.base.mode, seed=seed).validate()
                out.append((f"{cfg.label}_s{seed}", cfg))
        return out


SWEEP_KEYS = ("base", "strategies", "seeds", "out")


def load_sweep(path: str | Path) -> SweepSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be an object")
    for key in data:
        if key not in SWEEP_KEYS:
            raise ConfigError(f"unknown sweep key {key!r}")
    base = FLConfig.from_dict(data.get("base", {}))
    base = apply_seed_env(base)
    strategies = tuple(data.get("strategies", DEFAULT_STRATEGIES))
    seeds = data.get("seeds", [base.seed])
    if not isinstance(seeds, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds: expected a list of integers")
    out = Path(data["out"]) if "out" in data else None
    return SweepSpec(base, strategies, tuple(seeds), out)


def _sweep_job(args: tuple[str, dict, str]) -> str:
    name, cfg_dict, out = args
    run_to_dir(FLConfig.from_dict(cfg_dict), Path(out) / name)
    return name


def run_sweep(spec: SweepSpec, out: str | Path, parallel: int = 1) -> list[Path]:
    """Run every job, then write ``summary.csv`` and ``report.md``. A failed job aborts the sweep
    with its name attached; directories of finished jobs are left in place."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(name, cfg.to_dict(), str(out)) for name, cfg in spec.runs()]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [(job[0], pool.submit(_sweep_job, job)) for job in jobs]
            for name, fut in futures:
                try:
                    fut.result()
                except Exception as exc:
                    for _, other in futures:
                        other.cancel()
                    raise FedcastError(f"sweep run {name} failed: {exc}") from exc
    else:
        for job in jobs:
            try:
                _sweep_job(job)
            except Exception as exc:
                raise FedcastError(f"sweep run {job[0]} failed: {exc}") from exc
    write_report(out)
    return [out / job[0] for job in jobs]


# -- reading runs back -------------------------------------------------------

@dataclass
class RunData:
    path: Path
    rows: list[dict[str, str]]
    stage_times: dict[str, list[float]] = field(default_factory=dict)

    @property
    def strategy(self) -> str:
        return self.rows[0]["strategy"] if self.rows else ""

    @property
    def mode(self) -> str:
        return self.rows[0]["mode"] if self.rows else ""

    @property
    def label(self) -> str:
        return f"{self.strategy}_{self.mode}" if self.mode else self.strategy

    def column(self, name: str) -> list[float]:
        return [float(r[name]) if r[name] != "" else math.nan for r in self.rows]

    def final(self) -> dict[str, str]:
        return self.rows[-1]

    def final_bleu(self) -> float:
        return float(self.final()["bleu"])

    def final_l_val(self) -> float:
        return float(self.final()["l_val"])

    def mean_saving(self) -> float:
        """Mean tensor saving over rounds with selection (all rounds if every round was warm)."""
        active = [float(r["saving_mean"]) for r in self.rows if r.get("warm", "0") != "1"]
        vals = active or [float(r["saving_mean"]) for r in self.rows]
        return float(np.mean(vals))

    def cumulative_bytes(self) -> int:
        return sum(int(r["bytes_round"]) for r in self.rows)

    def metric(self, name: str) -> float:
        return {"bleu": self.final_bleu, "l_val": self.final_l_val, "saving": self.mean_saving,
                "bytes": self.cumulative_bytes}[name]()


def read_rounds(path: str | Path) -> list[dict[str, str]]:
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = tuple(reader.fieldnames or ())
            rows = list(reader)
    except OSError as exc:
        raise FedcastError(f"{path}: cannot read ({exc})") from None
    missing = [c for c in ROUND_COLUMNS if c not in header]
    if missing:
        raise FedcastError(f"{path}: missing columns {missing}")
    for i, row in enumerate(rows):
        if None in row or any(v is None for v in row.values()):
            raise FedcastError(f"{path}: malformed row {i + 1}")
        try:
            int(row["round"])
            float(row["l_val"])
            float(row["bleu"])
            float(row["saving_mean"])
            int(row["bytes_round"])
        except ValueError:
            raise FedcastError(f"{path}: non-numeric value in row {i + 1}") from None
    return rows


def _stage_times(run_dir: Path, rows: list[dict[str, str]]) -> dict[str, list[float]]:
    cols = [f"t_{s}" for s in STAGES]
    if rows and all(rows[0][c] != "" for c in cols):
        return {c: [float(r[c]) for r in rows] for c in cols}
    path = run_dir / "timings.csv"
    if not path.exists():
        return {}
    with path.open(encoding="utf-8", newline="") as fh:
        trows = list(csv.DictReader(fh))
    if not all(c in (trows[0] if trows else {}) for c in cols):
        raise FedcastError(f"{path}: missing stage columns")
    return {c: [float(r[c]) for r in trows] for c in cols}


def collect_runs(directory: str | Path) -> list[RunData]:
    """Every run below ``directory`` (any folder holding a ``rounds.csv``), sorted by path."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FedcastError(f"{directory}: not a directory")
    runs, errors = [], []
    for path in sorted(directory.rglob("rounds.csv")):
        try:
            rows = read_rounds(path)
            if not rows:
                raise FedcastError(f"{path}: no data rows")
            runs.append(RunData(path.parent, rows, _stage_times(path.parent, rows)))
        except FedcastError as exc:
            errors.append(str(exc))
    if errors:
        raise FedcastError("; ".join(errors))
    if not runs:
        raise FedcastError(f"{directory}: no completed runs found")
    return runs


# -- summaries ---------------------------------------------------------------

def median_iqr(values: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(a, [25, 50, 75])
    return float(med), float(q3 - q1)


def summarize(runs: Sequence[RunData]) -> list[dict[str, Any]]:
    """One row per strategy label with median and IQR over its runs, in first-seen order."""
    groups: dict[str, list[RunData]] = {}
    for run in runs:
        groups.setdefault(run.label, []).append(run)
    rows = []
    for label, group in groups.items():
        row: dict[str, Any] = {"strategy": group[0].strategy, "mode": group[0].mode, "runs": len(group)}
        for m in SUMMARY_METRICS:
            row[f"{m}_median"], row[f"{m}_iqr"] = median_iqr([r.metric(m) for r in group])
        for s in STAGES:
            per_run = [float(np.mean(r.stage_times[f"t_{s}"])) for r in group if r.stage_times]
            row[f"t_{s}_mean"] = float(np.mean(per_run)) if per_run else math.nan
        rows.append(row)
    return rows


SUMMARY_COLUMNS = (("strategy", "mode", "runs")
                   + tuple(f"{m}_{k}" for m in SUMMARY_METRICS for k in ("median", "iqr"))
                   + tuple(f"t_{s}_mean" for s in STAGES))


def _summary_cell(value: Any) -> str:
    if isinstance(value, (str, int)):
        return str(value)
    return "" if math.isnan(value) else format(value, ".17g")


def write_summary(runs: Sequence[RunData], path: str | Path) -> list[dict[str, Any]]:
    rows = summarize(runs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_summary_cell(row[c]) for c in SUMMARY_COLUMNS])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return rows


def theta_table(runs: Sequence[RunData]) -> tuple[list[str], list[list[str]]]:
    """Per-round thresholds, one column per run; empty where a run has no threshold."""
    names = [str(r.path.name) for r in runs]
    n_rounds = max(len(r.rows) for r in runs)
    body = []
    for i in range(n_rounds):
        line = [str(i + 1)]
        for r in runs:
            line.append(r.rows[i]["theta"] if i < len(r.rows) else "")
        body.append(line)
    return ["round"] + names, body


def _md_table(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines)


def _fmt(x: float, digits: int = 4) -> str:
    return "" if math.isnan(x) else f"{x:.{digits}f}"


def write_report(directory: str | Path) -> Path:
    """``summary.csv`` and ``report.md`` for all runs under ``directory``."""
    directory = Path(directory)
    runs = collect_runs(directory)
    rows = write_summary(runs, directory / "summary.csv")
    parts = ["# Run report", "", f"{len(runs)} run(s) under `{directory}`.", "", "## Summary (median over runs)", ""]
    parts.append(_md_table(
        ["strategy", "runs", "final BLEU", "IQR", "final L_val", "mean saving", "cum. bytes"],
        [[r["strategy"] + (f"_{r['mode']}" if r["mode"] else ""), str(r["runs"]), _fmt(r["bleu_median"], 2),
          _fmt(r["bleu_iqr"], 2), _fmt(r["l_val_median"]), _fmt(r["saving_median"], 3),
          str(int(r["bytes_median"]))] for r in rows]))
    parts += ["", "## Savings versus quality", ""]
    order = sorted(rows, key=lambda r: (r["saving_median"], r["bleu_median"]))
    parts.append(_md_table(["strategy", "mean saving", "final BLEU"],
                           [[r["strategy"] + (f"_{r['mode']}" if r["mode"] else ""),
                             _fmt(r["saving_median"], 3), _fmt(r["bleu_median"], 2)] for r in order]))
    parts += ["", "## Final rows", ""]
    parts.append(_md_table(["run", "round", "theta", "l_val", "bleu", "token_acc", "saving_mean"],
                           [[r.path.name] + [r.final()[c] for c in ("round", "theta", "l_val", "bleu",
                                                                   "token_acc", "saving_mean")]
                            for r in runs]))
    parts += ["", "## Threshold trajectory", ""]
    header, body = theta_table(runs)
    parts.append(_md_table(header, body))
    path = directory / "report.md"
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path


# -- CLI ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcast", description="Federated tensor-selection simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log each round")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p = sub.add_parser("sweep", help="run strategies x seeds and summarize")
    p.add_argument("--spec", required=True, help="JSON sweep file")
    p.add_argument("--out", default=None, help="output directory (overrides the spec)")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p = sub.add_parser("report", help="summarize finished runs")
    p.add_argument("--dir", required=True, help="directory containing runs")
    return parser


def _error_line(exc: BaseException) -> str:
    return json.dumps({"status": "error", "type": type(exc).__name__, "message": str(exc)})


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = apply_seed_env(load_config(args.config))
            out = run_to_dir(cfg, args.out)
            print(json.dumps({"status": "ok", "out": str(out)}))
        elif args.command == "sweep":
            spec = load_sweep(args.spec)
            out = args.out or spec.out
            if out is None:
                raise ConfigError("sweep needs --out or an 'out' key")
            if args.parallel < 1:
                raise ConfigError("--parallel must be >= 1")
            dirs = run_sweep(spec, out, args.parallel)
            print(json.dumps({"status": "ok", "out": str(out), "runs": len(dirs)}))
        else:
            path = write_report(args.dir)
            print(json.dumps({"status": "ok", "report": str(path)}))
    except ConfigError as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2
    except (FedcastError, OSError, ValueError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
