"""Run-window profiles: fitting, per-timestamp averaging, comparison and gating."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import window_matrix
from .ticc_gtc import ClusteringResult, ClusterModel, TiccGtcParams, fit


@dataclass(frozen=True)
class ThresholdConfig:
    floor: float = 0.05
    n_mad: float = 3.0
    min_history: int = 5


@dataclass
class Profile:
    """K cluster MRFs plus the cluster of every ``(t, run)`` in a window of runs."""

    run_window_end: int
    run_ids: tuple[str, ...]
    clustering: ClusteringResult
    params: TiccGtcParams

    @property
    def models(self) -> list[ClusterModel]:
        return self.clustering.models

    @property
    def t_w(self) -> int:
        return self.clustering.t_w

    def mrf_at(self, t: int, run: int) -> ClusterModel:
        """Model assigned to the window ending at 1-based timestamp ``t`` of ``run``."""
        return self.models[self.clustering.assignments[t - self.t_w, run]]

    def to_json_dict(self) -> dict:
        return {
            "run_window_end": self.run_window_end,
            "run_ids": list(self.run_ids),
            "params": asdict(self.params),
            "clustering": self.clustering.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Profile":
        return cls(
            run_window_end=int(obj["run_window_end"]),
            run_ids=tuple(obj["run_ids"]),
            clustering=ClusteringResult.from_json_dict(obj["clustering"]),
            params=TiccGtcParams(**{k: tuple(v) if isinstance(v, list) else v
                                    for k, v in obj["params"].items()}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "Profile":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass
class AveragedProfile:
    """One MRF per window end-time: mean of the assigned cluster matrices over runs.

    Timestamps with the same multiset of assigned clusters share one array object.
    """

    mrfs: list[np.ndarray]
    t_w: int

    def __len__(self) -> int:
        return len(self.mrfs)

    def as_array(self) -> np.ndarray:
        return np.stack(self.mrfs)


@dataclass
class ProfileDiffReport:
    score: float
    per_timestamp: list[float]
    threshold: float
    verdict: str
    run_id: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "score": self.score,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "per_timestamp": self.per_timestamp,
        }


def fit_profile(runs: Sequence[np.ndarray], params: TiccGtcParams, run_window_end: int = 0,
                run_ids: Sequence[str] | None = None, **fit_kwargs) -> Profile:
    """Fit TICC_GTC on the given ``(N, T)`` runs (the latest ``r_w`` of them)."""
    n_sensors = runs[0].shape[0]
    windows = np.stack([window_matrix(r, params.t_w) for r in runs])
    clustering = fit(windows, params, n_sensors, **fit_kwargs)
    ids = tuple(run_ids) if run_ids is not None else tuple(str(i) for i in range(len(runs)))
    return Profile(run_window_end=run_window_end, run_ids=ids, clustering=clustering, params=params)


def build_averaged_profile(p: Profile) -> AveragedProfile:
    assign = p.clustering.assignments  # (T_w, r_w)
    mats = [m.precision for m in p.models]
    cache: dict[tuple[int, ...], np.ndarray] = {}
    out = []
    for row in assign:
        key = tuple(sorted(int(k) for k in row))
        if key not in cache:
            cache[key] = np.mean([mats[k] for k in key], axis=0)
        out.append(cache[key])
    return AveragedProfile(mrfs=out, t_w=p.t_w)


def cosine_distance(A: np.ndarray, B: np.ndarray) -> float:
    """``1 - cos`` between ``|A|`` and ``|B|`` as flat vectors; zero matrices handled."""
    a = np.abs(A).ravel()
    b = np.abs(B).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0 if na == nb else 1.0
    return float(min(max(1.0 - (a @ b) / (na * nb), 0.0), 1.0))


def profile_difference(a: AveragedProfile, b: AveragedProfile) -> ProfileDiffReport:
    if len(a) != len(b):
        raise ValueError(f"profiles differ in length: {len(a)} vs {len(b)}")
    per_t = [cosine_distance(x, y) for x, y in zip(a.mrfs, b.mrfs)]
    return ProfileDiffReport(
        score=float(np.mean(per_t)), per_timestamp=per_t, threshold=float("nan"), verdict="normal"
    )


def anomaly_threshold(history: Sequence[float], cfg: ThresholdConfig = ThresholdConfig()) -> float:
    if len(history) < cfg.min_history:
        return cfg.floor
    h = np.asarray(history, dtype=float)
    med = float(np.median(h))
    mad = float(np.median(np.abs(h - med)))
    return max(cfg.floor, med + cfg.n_mad * mad)


def detect_anomalous_run(history: Sequence[float], current: float,
                         cfg: ThresholdConfig = ThresholdConfig()) -> str:
    if current < 0:
        raise ValueError("difference score must be nonnegative")
    return "anomalous" if current > anomaly_threshold(history, cfg) else "normal"


@dataclass
class MonitorState:
    """Rolling old/new profile pair; one run arrival at a time."""

    params: TiccGtcParams
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    runs: deque = field(default_factory=deque)
    run_ids: deque = field(default_factory=deque)
    r: int = -1
    new_profile: Profile | None = None
    old_profile: Profile | None = None
    history: list[float] = field(default_factory=list)
    reports: list[ProfileDiffReport] = field(default_factory=list)

    @property
    def n_comparisons(self) -> int:
        return len(self.reports)

    def advance(self, run: np.ndarray, run_id: str | None = None) -> ProfileDiffReport | None:
        """Take one new run; returns a comparison report once both profiles exist."""
        self.r += 1
        self.runs.append(np.asarray(run, dtype=float))
        self.run_ids.append(str(self.r) if run_id is None else str(run_id))
        while len(self.runs) > self.params.r_w:
            self.runs.popleft()
            self.run_ids.popleft()
        if len(self.runs) < self.params.r_w:
            return None
        self.old_profile = self.new_profile
        warm = self.old_profile.models if self.old_profile is not None else None
        self.new_profile = fit_profile(list(self.runs), self.params, self.r, list(self.run_ids),
                                       warm_start=warm)
        if self.old_profile is None:
            return None
        report = profile_difference(
            build_averaged_profile(self.old_profile), build_averaged_profile(self.new_profile)
        )
        report.threshold = anomaly_threshold(self.history, self.threshold)
        report.verdict = detect_anomalous_run(self.history, report.score, self.threshold)
        report.run_id = self.run_ids[-1]
        if report.verdict == "normal":
            self.history.append(report.score)
        self.reports.append(report)
        return report
