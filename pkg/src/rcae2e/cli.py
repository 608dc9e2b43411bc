"""Command line entry point: ``rcae2e {synth,fit,monitor,rank,sweep,eval}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .dataset import DataError, StandardizationStats, load_runs, standardize, write_runs
from .evaluation import evaluate_ranking, run_sweep
from .pipeline import StateError, rank_run
from .profile import MonitorState, Profile, fit_profile
from .rca_scc import write_point_scores, write_ranking
from .synthgen import generate, write_ground_truth
from .ticc_gtc import CapacityError, ConfigError

log = logging.getLogger("rcae2e")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _out(cfg: PipelineConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _data(cfg: PipelineConfig):
    if cfg.data is None:
        raise ConfigError("data: no input path; set it in the config or pass --data")
    return load_runs(cfg.data)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


# --- subcommands --------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, args) -> int:
    out = _out(cfg)
    data, truth = generate(cfg.synth)
    write_runs(data, out / "data.csv")
    write_ground_truth(truth, cfg.synth, out / "ground_truth.json", data.sensor_names)
    print(f"wrote {data.n_runs} runs x {data.n_timestamps} timestamps x {data.n_sensors} sensors to {out / 'data.csv'}")
    return EXIT_OK


def cmd_fit(cfg: PipelineConfig, args) -> int:
    out = _out(cfg)
    data = _data(cfg)
    ids = list(args.runs) if args.runs else list(data.run_ids[-cfg.ticc.r_w:])
    if len(ids) != cfg.ticc.r_w:
        raise ConfigError(f"ticc.r_w: {cfg.ticc.r_w} runs expected, got {len(ids)}")
    sub = data.subset([data.run_ids.index(i) for i in ids])
    std, stats = standardize(sub)
    profile = fit_profile(list(std.runs), cfg.ticc, len(data.run_ids) - 1, ids)
    stats.save(out / "stats.json")
    profile.save(out / "profile.json")
    trace = profile.clustering.objective_trace
    print(f"fitted K={cfg.ticc.K} on runs {ids}: {len(trace)} EM iterations, objective {trace[-1]:.6g}")
    return EXIT_OK


def _rank_dir(out: Path, run_id: str) -> Path:
    d = out / "rank" / str(run_id)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _rank_one(cfg: PipelineConfig, data, run_id: str) -> Path:
    """Rank one run against the profile saved just before it arrived."""
    out = Path(cfg.out)
    profile_path = out / "profiles" / f"profile_before_{run_id}.json"
    stats_path = out / "stats.json"
    if not profile_path.exists():
        raise StateError(f"no old profile for run {run_id!r} ({profile_path}); run monitor first")
    if not stats_path.exists():
        raise StateError(f"no standardization stats at {stats_path}; run monitor first")
    if run_id not in data.run_ids:
        raise DataError(f"run {run_id!r} not found in the data")
    profile = Profile.load(profile_path)
    stats = StandardizationStats.load(stats_path)
    std, _ = standardize(data.subset([data.run_ids.index(run_id)]), stats)
    result = rank_run(std.runs[0], profile, cfg.ticc, cfg.rca, data.sensor_names)
    d = _rank_dir(out, run_id)
    write_point_scores(result.scores.point_scores, data.sensor_names, d / "point_scores.csv")
    write_ranking(result.ranking, d / "ranking.json")
    top = ", ".join(str(s) for s, _ in result.ranking[:5])
    print(f"run {run_id}: top sensors {top}")
    return d


def cmd_monitor(cfg: PipelineConfig, args) -> int:
    out = _out(cfg)
    data = _data(cfg)
    r_w = cfg.ticc.r_w
    if data.n_runs < r_w:
        raise StateError(f"warm-up needs r_w = {r_w} runs, only {data.n_runs} available")
    # standardization statistics come from the warm-up runs only
    _, stats = standardize(data.subset(list(range(r_w))))
    stats.save(out / "stats.json")
    std, _ = standardize(data, stats)
    (out / "profiles").mkdir(exist_ok=True)
    state = MonitorState(params=cfg.ticc, threshold=cfg.threshold)
    reports = []
    anomalous = []
    for run, rid in zip(std.runs, std.run_ids):
        before = state.new_profile
        report = state.advance(run, rid)
        if report is None:
            continue
        before.save(out / "profiles" / f"profile_before_{rid}.json")
        reports.append(report.to_json_dict())
        print(f"run {rid}: score={report.score:.6f} threshold={report.threshold:.6f} {report.verdict}")
        if report.verdict == "anomalous":
            anomalous.append(rid)
    _write_json(out / "verdicts.json", reports)
    if not args.no_rank:
        for rid in anomalous:
            _rank_one(cfg, data, rid)
    return EXIT_OK


def cmd_rank(cfg: PipelineConfig, args) -> int:
    data = _data(cfg)
    run_id = args.run
    if run_id is None:
        verdicts_path = Path(cfg.out) / "verdicts.json"
        if not verdicts_path.exists():
            raise StateError("no --run given and no verdicts.json; run monitor first")
        flagged = [v["run_id"] for v in json.loads(verdicts_path.read_text()) if v["verdict"] == "anomalous"]
        if not flagged:
            raise StateError("no --run given and monitor flagged no anomalous run")
        run_id = flagged[-1]
    _rank_one(cfg, data, str(run_id))
    return EXIT_OK


def _write_plot_data(result, out: Path) -> None:
    with open(out / f"{result.experiment}_plot.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "method", "ndcg_mean", "ndcg_std", "precision_mean", "recall_mean", "n_seeds"])
        for (v, m), rep in result.summary().items():
            nd = [s["ndcg"] for s in rep.per_seed.values()]
            w.writerow([v, m, rep.ndcg_at_p, float(np.std(nd)), rep.precision_at_k, rep.recall_at_k, len(nd)])


def cmd_sweep(cfg: PipelineConfig, args) -> int:
    out = _out(cfg)
    sw = cfg.sweep
    result = run_sweep(sw.experiment, list(sw.grid), list(sw.seeds), list(sw.methods),
                       cfg.synth, cfg.ticc, cfg.rca, workers=sw.workers)
    result.write(out)
    _write_plot_data(result, out)
    for (v, m), rep in result.summary().items():
        print(f"{result.param}={v} {m}: nDCG {rep.ndcg_at_p:.4f} precision {rep.precision_at_k:.4f} "
              f"recall {rep.recall_at_k:.4f}")
    print(f"failed trials: {len(result.failures())}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, args) -> int:
    out = _out(cfg)
    truth_path = Path(args.truth) if args.truth else out / "ground_truth.json"
    truth = json.loads(truth_path.read_text())
    roots = truth["root_cause_sensors"]
    if args.ranking:
        ranking_path = Path(args.ranking)
    else:
        runs = truth.get("anomalous_runs") or []
        if not runs:
            raise StateError("ground truth names no anomalous run; pass --ranking")
        ranking_path = out / "rank" / str(runs[0]) / "ranking.json"
    ranked = [r["sensor"] for r in sorted(json.loads(ranking_path.read_text()), key=lambda r: r["rank"])]
    rep = evaluate_ranking(ranked, roots, cfg.eval.k, cfg.eval.p)
    obj = {"ranking": str(ranking_path), "truth": roots, **rep.to_json_dict()}
    obj.pop("per_seed")
    _write_json(out / "metrics.json", obj)
    print(f"precision@{rep.k} {rep.precision_at_k:.4f} recall@{rep.k} {rep.recall_at_k:.4f} "
          f"nDCG@{rep.p} {rep.ndcg_at_p:.4f}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "monitor": cmd_monitor,
    "rank": cmd_rank,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration document")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. ticc.K=3 (repeatable)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="top-level seed for every stage")
    common.add_argument("--data", help="input CSV file or directory of CSV files")
    common.add_argument("--k", type=int, dest="K", help="number of clusters (ticc.K)")
    common.add_argument("--t-w", type=int, dest="t_w", help="window size (ticc.t_w)")
    common.add_argument("--r-w", type=int, dest="r_w", help="runs per profile (ticc.r_w)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rcae2e", description="Causal anomaly ranking across multi-run sensor data.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate synthetic runs and ground truth")
    p = sub.add_parser("fit", parents=[common], help="fit a profile on the latest r_w runs")
    p.add_argument("--runs", nargs="+", help="run ids to fit (default: last r_w)")
    p = sub.add_parser("monitor", parents=[common], help="replay runs, compare profiles, flag anomalous runs")
    p.add_argument("--no-rank", action="store_true", help="do not rank flagged runs automatically")
    p = sub.add_parser("rank", parents=[common], help="rank causal sensors of one anomalous run")
    p.add_argument("--run", help="run id (default: last run flagged by monitor)")
    sub.add_parser("sweep", parents=[common], help="run a synthetic experiment sweep")
    p = sub.add_parser("eval", parents=[common], help="score a ranking against ground truth")
    p.add_argument("--ranking", help="ranking JSON (default: out/rank/<anomalous run>/ranking.json)")
    p.add_argument("--truth", help="ground-truth JSON (default: out/ground_truth.json)")
    return parser


def resolve_config(args) -> PipelineConfig:
    overrides = list(args.set)
    for flag, key in (("out", "out"), ("seed", "seed"), ("data", "data"),
                      ("K", "ticc.K"), ("t_w", "ticc.t_w"), ("r_w", "ticc.r_w")):
        v = getattr(args, flag)
        if v is not None:
            overrides.append(f"{key}={json.dumps(v)}")
    return load_config(args.config, overrides).seeded()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.filterwarnings("ignore", module="sklearn")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CapacityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, StateError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - stable exit-code contract
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
