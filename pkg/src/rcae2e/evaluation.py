"""Ranking metrics and the synthetic experiment sweeps."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pipeline import profile_target, score_inputs
from .rca_scc import RcaParams
from .synthgen import SynthConfig, generate
from .ticc_gtc import TiccGtcParams

log = logging.getLogger(__name__)

EXPERIMENTS = ("states", "cross_time_lag", "noise_ratio", "convergence")
METHODS = ("RCAE2E", "single-state", "single-lag", "no-propagation")
# stand-in for c -> 0: E = (1 - c)(I - c A)^-1 is the identity up to O(c)
NO_PROPAGATION_C = 1e-6


class SweepError(ValueError):
    pass


# --- metrics ------------------------------------------------------------------

def default_k(m: int) -> int:
    return 2 * m


def default_p(m: int) -> int:
    return max(1, m - 1)


def precision_recall_at_k(ranked: Sequence, truth: Iterable, k: int) -> tuple[float, float]:
    truth = set(truth)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not truth:
        raise ValueError("truth set is empty")
    hits = len(set(list(ranked)[:k]) & truth)
    return hits / k, hits / len(truth)


def ndcg_at_p(ranked: Sequence, truth: Iterable, p: int) -> float:
    truth = set(truth)
    if p < 1:
        raise ValueError("p must be >= 1")
    if not truth:
        raise ValueError("truth set is empty")
    dcg = sum(1.0 / math.log2(i + 2) for i, x in enumerate(list(ranked)[:p]) if x in truth)
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(p, len(truth))))
    return dcg / idcg


@dataclass
class MetricReport:
    precision_at_k: float
    recall_at_k: float
    ndcg_at_p: float
    k: int
    p: int
    per_seed: dict[int, dict[str, float]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["per_seed"] = {str(s): v for s, v in self.per_seed.items()}
        return d


def evaluate_ranking(ranked: Sequence, truth: Iterable, k: int | None = None, p: int | None = None) -> MetricReport:
    truth = set(truth)
    k = default_k(len(truth)) if k is None else k
    p = default_p(len(truth)) if p is None else p
    prec, rec = precision_recall_at_k(ranked, truth, k)
    return MetricReport(prec, rec, ndcg_at_p(ranked, truth, p), k, p)


# --- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    value: float
    method: str
    seed: int
    precision: float = float("nan")
    recall: float = float("nan")
    ndcg: float = float("nan")
    error: str | None = None


@dataclass
class SweepResult:
    experiment: str
    param: str
    values: list
    records: list[TrialRecord] = field(default_factory=list)
    # convergence experiment: (value, seed, trace index) -> objective trace
    traces: dict[tuple, list[float]] = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return sorted({r.method for r in self.records}, key=lambda m: (m != "RCAE2E", m))

    def failures(self) -> list[TrialRecord]:
        return [r for r in self.records if r.error is not None]

    def summary(self) -> dict[tuple, MetricReport]:
        """Seed-mean metrics per ``(value, method)``; failed trials are left out."""
        out = {}
        for v in self.values:
            for m in self.methods:
                rows = [r for r in self.records if r.value == v and r.method == m and r.error is None]
                if not rows:
                    continue
                rep = MetricReport(
                    precision_at_k=float(np.mean([r.precision for r in rows])),
                    recall_at_k=float(np.mean([r.recall for r in rows])),
                    ndcg_at_p=float(np.mean([r.ndcg for r in rows])),
                    k=-1,
                    p=-1,
                    per_seed={r.seed: {"precision": r.precision, "recall": r.recall, "ndcg": r.ndcg} for r in rows},
                )
                out[(v, m)] = rep
        return out

    def mean_ndcg(self, value, method: str) -> float:
        rep = self.summary().get((value, method))
        return float("nan") if rep is None else rep.ndcg_at_p

    def to_json_dict(self) -> dict:
        summ = []
        for (v, m), rep in self.summary().items():
            per = [s["ndcg"] for s in rep.per_seed.values()]
            summ.append({
                "value": v,
                "method": m,
                "n_seeds": len(per),
                "precision_mean": rep.precision_at_k,
                "recall_mean": rep.recall_at_k,
                "ndcg_mean": rep.ndcg_at_p,
                "ndcg_std": float(np.std(per)),
            })
        return {
            "experiment": self.experiment,
            "param": self.param,
            "values": list(self.values),
            "summary": summ,
            "failures": [asdict(r) for r in self.failures()],
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if self.experiment == "convergence":
            with open(out / "convergence.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["value", "seed", "trace", "iteration", "objective"])
                for (v, seed, j), tr in sorted(self.traces.items()):
                    for i, obj in enumerate(tr):
                        w.writerow([v, seed, j, i, repr(float(obj))])
            (out / "convergence_summary.json").write_text(json.dumps(self.to_json_dict(), indent=2))
            return
        with open(out / f"{self.experiment}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["param", "value", "method", "seed", "precision", "recall", "ndcg"])
            for r in self.records:
                w.writerow([self.param, r.value, r.method, r.seed, r.precision, r.recall, r.ndcg])
        (out / f"{self.experiment}_summary.json").write_text(json.dumps(self.to_json_dict(), indent=2))


_PARAM = {"states": "K", "cross_time_lag": "max_lag", "noise_ratio": "noise_ratio", "convergence": "K"}


def _method_params(method: str, ticc: TiccGtcParams, rca: RcaParams) -> tuple[TiccGtcParams, RcaParams]:
    if method == "RCAE2E":
        return ticc, rca
    if method == "single-state":
        return replace(ticc, K=1), rca
    if method == "single-lag":
        return replace(ticc, t_w=1), rca
    if method == "no-propagation":
        return ticc, replace(rca, c=NO_PROPAGATION_C)
    raise SweepError(f"unknown method {method!r}; expected one of {METHODS}")


def _trial_configs(experiment: str, value, seed: int, synth: SynthConfig, ticc: TiccGtcParams):
    if experiment in ("states", "convergence"):
        return replace(synth, K=int(value), seed=seed), replace(ticc, K=int(value))
    if experiment == "cross_time_lag":
        return replace(synth, max_lag=int(value), seed=seed), ticc
    if experiment == "noise_ratio":
        return replace(synth, noise_ratio=float(value), seed=seed), ticc
    raise SweepError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")


def run_trial(experiment: str, value, seed: int, methods: Sequence[str], synth: SynthConfig,
              ticc: TiccGtcParams, rca: RcaParams) -> tuple[list[TrialRecord], list[list[float]]]:
    """One ``(value, seed)``: generate data once, then score it with every method.

    Methods that differ only in RCA parameters share one profile and refit.
    """
    cfg, base = _trial_configs(experiment, value, seed, synth, ticc)
    records, traces = [], []
    try:
        data, truth = generate(cfg)
    except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
        return [TrialRecord(value, m, seed, error=f"{type(exc).__name__}: {exc}") for m in methods], []
    target = truth.anomalous_runs[0]
    truth_names = {data.sensor_names[i] for i in truth.root_causes}
    cache = {}
    for method in methods:
        try:
            tp, rp = _method_params(method, base, rca)
            train = list(range(target - tp.r_w, target))
            if train[0] < 0:
                raise SweepError(f"anomalous run {target} has fewer than r_w = {tp.r_w} runs before it")
            if tp not in cache:
                cache[tp] = profile_target(data, train, target, tp)[0]
            res = score_inputs(cache[tp], rp, data.sensor_names)
            rep = evaluate_ranking([s for s, _ in res.ranking], truth_names)
            records.append(TrialRecord(value, method, seed, rep.precision_at_k, rep.recall_at_k, rep.ndcg_at_p))
            if method == "RCAE2E":
                traces = res.scores.traces
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            log.warning("trial %s=%s seed %d method %s failed: %s", experiment, value, seed, method, exc)
            records.append(TrialRecord(value, method, seed, error=f"{type(exc).__name__}: {exc}"))
    return records, traces


def run_sweep(
    experiment: str,
    grid: Sequence,
    seeds: Sequence[int],
    methods: Sequence[str] = ("RCAE2E", "single-state"),
    synth: SynthConfig | None = None,
    ticc: TiccGtcParams | None = None,
    rca: RcaParams | None = None,
    workers: int = 1,
) -> SweepResult:
    """Synthetic data -> pipeline -> metrics for every ``(value, seed, method)``.

    The convergence experiment also keeps the RCAE2E solver's objective traces.
    """
    if experiment not in EXPERIMENTS:
        raise SweepError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    if not len(grid):
        raise SweepError("grid is empty")
    methods = list(methods)
    if "RCAE2E" not in methods or len(methods) < 2:
        raise SweepError("methods must include RCAE2E and at least one ablation")
    for m in methods:
        if m not in METHODS:
            raise SweepError(f"unknown method {m!r}; expected one of {METHODS}")
    synth = synth or SynthConfig()
    ticc = ticc or TiccGtcParams(t_w=synth.t_w)
    rca = rca or RcaParams()
    if experiment == "cross_time_lag" and max(grid) > synth.t_w - 1:
        raise SweepError(f"planted lag {max(grid)} needs synthetic t_w >= {max(grid) + 1}")

    jobs = [(experiment, v, s, methods, synth, ticc, rca) for v in grid for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run_trial, *zip(*jobs)))
    else:
        outs = [run_trial(*job) for job in jobs]

    result = SweepResult(experiment=experiment, param=_PARAM[experiment], values=list(grid))
    for (_, v, s, *_rest), (records, traces) in zip(jobs, outs):
        result.records.extend(records)
        if experiment == "convergence":
            for j, tr in enumerate(traces):
                result.traces[(v, s, j)] = tr
    return result
