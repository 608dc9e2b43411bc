"""Synthetic multi-run data from planted block-Toeplitz MRFs, with causal anomalies.

Clusters are Erdos-Renyi graphs over sensors, one directed block per time lag up
to ``max_lag``, tiled into a block-Toeplitz precision. Runs follow a shared
segment schedule; each new timestamp is drawn from the Gaussian conditional of
the newest block given the previous ``t_w - 1`` under the active cluster.
Anomalies pick ``m`` root sensors, propagate them with ``b = E s`` on the active
cluster's normalized network, and scale each sensor by ``1 + gamma * b_max``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import RunDataset
from .rca_scc import normalize_adjacency, propagation_operator
from .ticc_gtc import ClusterModel, make_positive_definite, project_block_toeplitz, toeplitz_from_lags


class SynthConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass(frozen=True)
class SynthConfig:
    N: int = 20
    T: int = 400
    R: int = 6
    K: int = 3
    t_w: int = 2
    edge_prob: float = 0.1
    max_lag: int = 1
    segment_length: int = 50
    # explicit [[cluster, length], ...]; overrides segment_length cycling when set
    schedule: tuple | None = None
    anomaly_count: int = 3
    amplitude: float = 3.0
    noise_ratio: float = 0.0
    anomalous_runs: tuple[int, ...] = (-1,)
    interval: tuple[int, int] | None = None  # 1-based inclusive; None = whole run
    # restrict injection to timestamps where this planted state is active
    anomalous_state: int | None = None
    propagation_c: float = 0.5
    weight_low: float = 0.3
    weight_high: float = 1.0
    pd_margin: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("N", "T", "R", "K", "t_w"):
            if getattr(self, name) < 1:
                raise SynthConfigError(name, "must be >= 1")
        if not 0 <= self.edge_prob < 1:
            raise SynthConfigError("edge_prob", "must lie in [0, 1)")
        if self.max_lag < 0:
            raise SynthConfigError("max_lag", "must be >= 0")
        if self.anomaly_count > self.N:
            raise SynthConfigError("anomaly_count", f"{self.anomaly_count} exceeds N = {self.N}")
        if self.anomaly_count < 0:
            raise SynthConfigError("anomaly_count", "must be >= 0")
        if self.noise_ratio < 0:
            raise SynthConfigError("noise_ratio", "must be >= 0")
        if self.t_w > self.T:
            raise SynthConfigError("t_w", "exceeds T")
        sched = self.segments()
        if sum(length for _, length in sched) != self.T:
            raise SynthConfigError("schedule", f"segment lengths must sum to T = {self.T}")
        if any(not 0 <= k < self.K for k, _ in sched):
            raise SynthConfigError("schedule", f"cluster ids must lie in 0..{self.K - 1}")
        if self.anomalous_state is not None and not 0 <= self.anomalous_state < self.K:
            raise SynthConfigError("anomalous_state", f"must lie in 0..{self.K - 1}")
        if self.interval is not None:
            lo, hi = self.interval
            if not 1 <= lo <= hi <= self.T:
                raise SynthConfigError("interval", f"must satisfy 1 <= start <= end <= {self.T}")

    def segments(self) -> list[tuple[int, int]]:
        if self.schedule is not None:
            return [(int(k), int(n)) for k, n in self.schedule]
        out, t, k = [], 0, 0
        while t < self.T:
            n = min(self.segment_length, self.T - t)
            out.append((k % self.K, n))
            t += n
            k += 1
        return out

    def labels(self) -> np.ndarray:
        """Active cluster at each of the ``T`` timestamps."""
        return np.concatenate([np.full(n, k, dtype=int) for k, n in self.segments()])

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["anomalous_runs"] = list(self.anomalous_runs)
        return d


@dataclass
class GroundTruth:
    models: list[ClusterModel]
    labels: np.ndarray  # planted cluster per timestamp, shared by all runs
    root_causes: list[int] = field(default_factory=list)
    propagated: dict[int, np.ndarray] = field(default_factory=dict)  # cluster -> b_max per sensor
    anomalous_runs: list[int] = field(default_factory=list)
    interval: tuple[int, int] | None = None

    def planted_assignments(self, t_w: int) -> np.ndarray:
        """Planted cluster per window end-time ``t_w .. T``."""
        return self.labels[t_w - 1:]

    def to_json_dict(self, cfg: SynthConfig, sensor_names=None) -> dict:
        names = list(sensor_names) if sensor_names is not None else None
        return {
            "root_cause_sensors": [names[i] for i in self.root_causes] if names else self.root_causes,
            "root_cause_indices": list(self.root_causes),
            "anomalous_runs": self.anomalous_runs,
            "interval": list(self.interval) if self.interval else None,
            "planted_assignments": self.labels.tolist(),
            "config": cfg.to_json_dict(),
        }


def _rngs(seed: int, n_runs: int):
    ss = np.random.SeedSequence(seed)
    mrf, anomaly, runs = ss.spawn(3)
    return (
        np.random.default_rng(mrf),
        np.random.default_rng(anomaly),
        [np.random.default_rng(s) for s in runs.spawn(n_runs)],
    )


def generate_mrfs(cfg: SynthConfig, rng: np.random.Generator | None = None) -> list[ClusterModel]:
    if rng is None:
        rng = _rngs(cfg.seed, cfg.R)[0]
    N, t_w = cfg.N, cfg.t_w
    models = []
    for k in range(cfg.K):
        blocks = []
        for lag in range(t_w):
            if lag > cfg.max_lag:
                blocks.append(np.zeros((N, N)))
                continue
            edges = rng.random((N, N)) < cfg.edge_prob
            w = rng.uniform(cfg.weight_low, cfg.weight_high, (N, N)) * rng.choice([-1.0, 1.0], (N, N))
            if lag == 0:
                np.fill_diagonal(edges, False)
                edges = np.triu(edges | edges.T, 1)
                W = np.where(edges, w, 0.0)
                W = W + W.T
            else:
                W = np.where(edges, w, 0.0)
            blocks.append(W)
        A = project_block_toeplitz(toeplitz_from_lags(blocks), N)
        lo = np.linalg.eigvalsh(A)[0]
        A = A + (cfg.pd_margin - lo) * np.eye(N * t_w)
        A = make_positive_definite(A)
        models.append(ClusterModel(precision=A, mean=np.zeros(N * t_w), cluster_id=k))
    return models


def _sample_run(models, labels, N, t_w, rng) -> np.ndarray:
    T = len(labels)
    n = N * t_w
    x = np.empty((N, T))
    first = models[labels[t_w - 1]].precision
    L = np.linalg.cholesky(np.linalg.inv(first))
    x[:, :t_w] = (L @ rng.standard_normal(n)).reshape(t_w, N).T
    if t_w == T:
        return x
    cond = []
    for m in models:
        P = m.precision
        P_nn = P[n - N:, n - N:]
        P_no = P[n - N:, : n - N]
        cov = np.linalg.inv(P_nn)
        cond.append((-cov @ P_no, np.linalg.cholesky(cov)))
    for t in range(t_w, T):
        coef, Lc = cond[labels[t]]
        past = x[:, t - t_w + 1: t].T.reshape(-1)
        x[:, t] = coef @ past + Lc @ rng.standard_normal(N)
    return x


def generate_series(
    models: list[ClusterModel], cfg: SynthConfig, run_rngs=None
) -> tuple[RunDataset, GroundTruth]:
    """Noise-optional runs following ``cfg``'s schedule; no anomalies yet."""
    if run_rngs is None:
        run_rngs = _rngs(cfg.seed, cfg.R)[2]
    labels = cfg.labels()
    runs = []
    for rng in run_rngs:
        x = _sample_run(models, labels, cfg.N, cfg.t_w, rng)
        if cfg.noise_ratio > 0:
            sd = x.std(axis=1, keepdims=True)
            x = x + cfg.noise_ratio * sd * rng.standard_normal(x.shape)
        runs.append(x)
    width = len(str(cfg.N))
    data = RunDataset(
        runs=tuple(runs),
        sensor_names=tuple(f"s{i:0{width}d}" for i in range(cfg.N)),
        run_ids=tuple(str(r) for r in range(cfg.R)),
    )
    return data, GroundTruth(models=models, labels=labels)


def propagated_scores(models: list[ClusterModel], roots, N: int, t_w: int, c: float) -> dict[int, np.ndarray]:
    """Per cluster, the largest propagated score ``b`` of each sensor over offsets."""
    s = np.zeros(N * t_w)
    for j in range(t_w):
        s[j * N + np.asarray(roots, dtype=int)] = 1.0
    out = {}
    for k, m in enumerate(models):
        adj, D = normalize_adjacency(m.precision)
        b = propagation_operator(adj, c, D).e_matrix @ s
        out[k] = b.reshape(t_w, N).max(axis=0)
    return out


def inject_anomalies(
    data: RunDataset,
    truth: GroundTruth,
    cfg: SynthConfig,
    rng: np.random.Generator | None = None,
) -> tuple[RunDataset, GroundTruth]:
    """Scale sensors of the anomalous runs by ``1 + amplitude * b_max``."""
    if cfg.anomaly_count < 1:
        raise SynthConfigError("anomaly_count", "must be >= 1 to inject anomalies")
    if cfg.anomaly_count > cfg.N:
        raise SynthConfigError("anomaly_count", f"{cfg.anomaly_count} exceeds N = {cfg.N}")
    if rng is None:
        rng = _rngs(cfg.seed, cfg.R)[1]
    roots = sorted(int(i) for i in rng.choice(cfg.N, size=cfg.anomaly_count, replace=False))
    bmax = propagated_scores(truth.models, roots, cfg.N, cfg.t_w, cfg.propagation_c)
    lo, hi = cfg.interval if cfg.interval is not None else (1, cfg.T)
    runs = list(data.runs)
    targets = sorted({r % data.n_runs for r in cfg.anomalous_runs})
    for r in targets:
        x = runs[r].copy()
        for t in range(lo - 1, hi):
            k = int(truth.labels[t])
            if cfg.anomalous_state is not None and k != cfg.anomalous_state:
                continue
            x[:, t] = x[:, t] * (1.0 + cfg.amplitude * bmax[k])
        runs[r] = x
    new_truth = GroundTruth(
        models=truth.models,
        labels=truth.labels,
        root_causes=roots,
        propagated=bmax,
        anomalous_runs=targets,
        interval=(lo, hi),
    )
    return data.replace_runs(runs), new_truth


def generate(cfg: SynthConfig, inject: bool = True) -> tuple[RunDataset, GroundTruth]:
    """Full generation: planted MRFs, runs, and (optionally) anomaly injection."""
    mrf_rng, anomaly_rng, run_rngs = _rngs(cfg.seed, cfg.R)
    models = generate_mrfs(cfg, mrf_rng)
    data, truth = generate_series(models, cfg, run_rngs)
    if inject and cfg.anomaly_count > 0:
        data, truth = inject_anomalies(data, truth, cfg, anomaly_rng)
    return data, truth


def write_ground_truth(truth: GroundTruth, cfg: SynthConfig, path: str | Path, sensor_names=None) -> None:
    Path(path).write_text(json.dumps(truth.to_json_dict(cfg, sensor_names), indent=2))
