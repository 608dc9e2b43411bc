"""Toeplitz inverse-covariance clustering across several aligned runs.

Each cluster is a Gaussian MRF over a stacked window whose precision matrix is
block-Toeplitz in ``N x N`` blocks. Cluster assignment is a joint Viterbi pass
over all runs of the window: switching clusters between consecutive windows of
one run costs ``beta``, and disagreeing with the previous run at the same
timestamp costs ``alpha``.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans
from sklearn.mixture import GaussianMixture

log = logging.getLogger(__name__)

MAX_JOINT_STATES = 4096
PD_DELTA = 1e-6
SHRINK_RATIO = 0.2
VAR_FLOOR = 1e-6


class NotPositiveDefiniteError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TiccGtcParams:
    K: int = 3
    lam: float = 1.0
    beta: float = 20.0
    alpha: float = 10.0
    t_w: int = 2
    r_w: int = 2
    max_em_iters: int = 100
    tol: float = 1e-6
    # extra EM starts: k-means on local second moments at each span, then mixture-model restarts
    init_spans: tuple[int, ...] = (10, 20, 40)
    n_restarts: int = 0
    seed: int = 0
    admm_max_iter: int = 1000
    admm_rho: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if any(s < 1 for s in self.init_spans) or self.n_restarts < 0:
            raise ConfigError("init_spans must be >= 1 and n_restarts >= 0")
        if self.t_w < 1 or self.r_w < 1:
            raise ConfigError("t_w and r_w must be >= 1")
        if min(self.lam, self.beta, self.alpha) < 0:
            raise ConfigError("lam, beta and alpha must be nonnegative")
        if self.K ** self.r_w > MAX_JOINT_STATES:
            raise CapacityError(
                f"K^r_w = {self.K}^{self.r_w} exceeds {MAX_JOINT_STATES} joint states; "
                "use a smaller K or r_w"
            )


@dataclass(frozen=True)
class ClusterModel:
    precision: np.ndarray
    mean: np.ndarray
    cluster_id: int
    converged: bool = True

    @property
    def dim(self) -> int:
        return self.precision.shape[0]


@dataclass
class ClusteringResult:
    models: list[ClusterModel]
    assignments: np.ndarray  # (T_w, r_w) cluster index per window end-time and run
    objective_trace: list[float]
    t_w: int
    n_sensors: int
    converged: bool = True
    # per-EM-iteration snapshots of fitted precisions, kept only on request
    history: list[list[np.ndarray]] = field(default_factory=list, repr=False)

    @property
    def K(self) -> int:
        return len(self.models)

    def to_json_dict(self) -> dict:
        T_w, r_w = self.assignments.shape
        return {
            "t_w": self.t_w,
            "n_sensors": self.n_sensors,
            "converged": self.converged,
            "models": [
                {
                    "cluster_id": m.cluster_id,
                    "mean": m.mean.tolist(),
                    "precision": m.precision.tolist(),
                    "converged": m.converged,
                }
                for m in self.models
            ],
            "assignments": [
                {"run": r, "t": i + self.t_w, "cluster": int(self.assignments[i, r])}
                for r in range(r_w)
                for i in range(T_w)
            ],
            "objective_trace": [float(v) for v in self.objective_trace],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ClusteringResult":
        models = [
            ClusterModel(
                precision=np.array(m["precision"], dtype=float),
                mean=np.array(m["mean"], dtype=float),
                cluster_id=int(m["cluster_id"]),
                converged=bool(m.get("converged", True)),
            )
            for m in obj["models"]
        ]
        t_w = int(obj["t_w"])
        recs = obj["assignments"]
        r_w = 1 + max(rec["run"] for rec in recs)
        T_w = 1 + max(rec["t"] for rec in recs) - t_w
        assign = np.full((T_w, r_w), -1, dtype=int)
        for rec in recs:
            assign[rec["t"] - t_w, rec["run"]] = rec["cluster"]
        if (assign < 0).any():
            raise ValueError("assignment records do not cover every (t, run)")
        return cls(
            models=models,
            assignments=assign,
            objective_trace=list(obj["objective_trace"]),
            t_w=t_w,
            n_sensors=int(obj["n_sensors"]),
            converged=bool(obj.get("converged", True)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "ClusteringResult":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


# --- block-Toeplitz helpers -------------------------------------------------

def _blocks(A: np.ndarray, n_sensors: int) -> np.ndarray:
    t_w = A.shape[0] // n_sensors
    return A.reshape(t_w, n_sensors, t_w, n_sensors)


def toeplitz_from_lags(lag_blocks: list[np.ndarray]) -> np.ndarray:
    """Assemble a symmetric block-Toeplitz matrix from its first block row.

    ``lag_blocks[d]`` is block ``(i, i + d)``; block ``(i + d, i)`` is its transpose.
    """
    t_w = len(lag_blocks)
    N = lag_blocks[0].shape[0]
    out = np.zeros((t_w, N, t_w, N))
    for d, B in enumerate(lag_blocks):
        for i in range(t_w - d):
            out[i, :, i + d, :] = B
            out[i + d, :, i, :] = B.T
    return out.reshape(t_w * N, t_w * N)


def lag_blocks(A: np.ndarray, n_sensors: int) -> list[np.ndarray]:
    """Average of the ``(i, i + d)`` blocks for each lag ``d`` (lag 0 symmetrized)."""
    Ab = _blocks(A, n_sensors)
    t_w = Ab.shape[0]
    out = []
    for d in range(t_w):
        upper = np.mean([Ab[i, :, i + d, :] for i in range(t_w - d)], axis=0)
        lower = np.mean([Ab[i + d, :, i, :].T for i in range(t_w - d)], axis=0)
        B = 0.5 * (upper + lower)
        if d == 0:
            B = 0.5 * (B + B.T)
        out.append(B)
    return out


def project_block_toeplitz(A: np.ndarray, n_sensors: int) -> np.ndarray:
    """Nearest (Frobenius) symmetric block-Toeplitz matrix."""
    return toeplitz_from_lags(lag_blocks(A, n_sensors))


def toeplitz_defect(A: np.ndarray, n_sensors: int) -> float:
    """Largest entrywise gap between block ``(i, j)`` and block ``(i + 1, j + 1)``."""
    Ab = _blocks(A, n_sensors)
    t_w = Ab.shape[0]
    if t_w == 1:
        return 0.0
    return float(np.max(np.abs(Ab[1:, :, 1:, :] - Ab[:-1, :, :-1, :])))


def make_positive_definite(A: np.ndarray, delta: float = PD_DELTA) -> np.ndarray:
    lo = np.linalg.eigvalsh(A)[0]
    if lo <= 0:
        A = A + (delta - lo) * np.eye(A.shape[0])
    return A


# --- likelihood ---------------------------------------------------------------

def _cholesky(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("precision matrix is not positive definite") from None


def log_likelihood(x: np.ndarray, model: ClusterModel) -> float:
    """Gaussian log density of one stacked window under ``model``."""
    x = np.asarray(x, dtype=float)
    if x.shape != model.mean.shape:
        raise ValueError(f"window has shape {x.shape}, model expects {model.mean.shape}")
    return float(log_likelihoods(x[None, :], model)[0])


def log_likelihoods(X: np.ndarray, model: ClusterModel) -> np.ndarray:
    L = _cholesky(model.precision)
    n = model.dim
    z = (X - model.mean) @ L
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * np.einsum("ij,ij->i", z, z) + 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)


def negll_table(windows: np.ndarray, models: list[ClusterModel]) -> np.ndarray:
    """``-loglik`` for windows ``(r_w, T_w, n)`` under each model, shaped ``(T_w, r_w, K)``."""
    r_w, T_w, n = windows.shape
    flat = windows.reshape(r_w * T_w, n)
    out = np.empty((T_w, r_w, len(models)))
    for k, m in enumerate(models):
        out[:, :, k] = -log_likelihoods(flat, m).reshape(r_w, T_w).T
    return out


# --- cluster assignment -------------------------------------------------------

def joint_states(K: int, r_w: int) -> np.ndarray:
    """Every way of picking one cluster per run, shape ``(K**r_w, r_w)``."""
    return np.array(list(itertools.product(range(K), repeat=r_w)), dtype=int).reshape(-1, r_w)


def assignment_cost(neg_ll: np.ndarray, assignments: np.ndarray, beta: float, alpha: float) -> float:
    """Assignment part of the objective for a ``(T_w, r_w)`` labelling."""
    T_w, r_w, _ = neg_ll.shape
    a = np.asarray(assignments)
    fit = neg_ll[np.arange(T_w)[:, None], np.arange(r_w)[None, :], a].sum()
    switches = np.count_nonzero(a[1:] != a[:-1])
    disagreements = np.count_nonzero(a[:, 1:] != a[:, :-1])
    return float(fit + beta * switches + alpha * disagreements)


def assign_clusters(
    neg_ll: np.ndarray, beta: float, alpha: float
) -> tuple[float, np.ndarray]:
    """Minimum-cost joint labelling of ``r_w`` runs.

    ``neg_ll`` has shape ``(T_w, r_w, K)``. The state at each time is the tuple of
    per-run clusters. The transition penalty ``beta * hamming(prev, cur)`` is
    separable across runs, so the min over previous states is taken one run-axis
    at a time: ``O(T * r_w * K**r_w)`` instead of the ``K**(2 r_w)`` pairwise scan.
    """
    T_w, r_w, K = neg_ll.shape
    S = K ** r_w
    if S > MAX_JOINT_STATES:
        raise CapacityError(f"{S} joint states exceeds cap {MAX_JOINT_STATES}")
    combos = joint_states(K, r_w)
    disagree = np.count_nonzero(combos[:, 1:] != combos[:, :-1], axis=1) * alpha
    # node[t, s] = sum_r neg_ll[t, r, combos[s, r]] + alpha * disagreements(s)
    node = neg_ll[:, np.arange(r_w)[None, :], combos].sum(axis=2) + disagree[None, :]

    shape = (K,) * r_w
    cum = np.empty((T_w, S))
    cum[0] = node[0]
    for t in range(1, T_w):
        D = cum[t - 1].reshape(shape)
        for ax in range(r_w):
            D = np.minimum(D, D.min(axis=ax, keepdims=True) + beta)
        cum[t] = node[t] + D.reshape(S)

    path = np.empty(T_w, dtype=int)
    path[-1] = int(np.argmin(cum[-1]))
    for t in range(T_w - 1, 0, -1):
        ham = np.count_nonzero(combos != combos[path[t]], axis=1)
        path[t - 1] = int(np.argmin(cum[t - 1] + beta * ham))
    return float(cum[-1, path[-1]]), combos[path]


# --- M-step -------------------------------------------------------------------

def _empirical_cov(X: np.ndarray) -> np.ndarray:
    m, n = X.shape
    diff = X - X.mean(axis=0)
    S = diff.T @ diff / m
    if m < n + 1:
        S = (1 - SHRINK_RATIO) * S + SHRINK_RATIO * np.diag(np.diag(S))
    idx = np.diag_indices(n)
    S[idx] = np.maximum(S[idx], VAR_FLOOR)
    return S


def _offdiag_l1(A: np.ndarray) -> float:
    return float(np.abs(A).sum() - np.abs(np.diag(A)).sum())


def cluster_objective(X: np.ndarray, model: ClusterModel, lam: float) -> float:
    """``lam * ||offdiag A||_1 - sum loglik`` over the windows ``X``."""
    return lam * _offdiag_l1(model.precision) - float(log_likelihoods(X, model).sum())


def _soft(x: np.ndarray, thr: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def solve_toeplitz_glasso(
    S: np.ndarray,
    penalty: float,
    n_sensors: int,
    *,
    rho: float = 1.0,
    max_iter: int = 1000,
    eps_abs: float = 1e-5,
    eps_rel: float = 1e-4,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, bool]:
    """ADMM for ``tr(S A) - logdet A + penalty * ||offdiag A||_1`` over block-Toeplitz A.

    The Z-step is exact for tied Toeplitz entries: average each tied group, then
    soft-threshold the off-diagonal entries. Returns the (sparse, block-Toeplitz)
    Z iterate, shifted to be positive definite if needed, plus a convergence flag.
    """
    n = S.shape[0]
    diag_mask = np.eye(n, dtype=bool)
    Z = project_block_toeplitz(init, n_sensors) if init is not None else np.diag(1.0 / np.diag(S))
    U = np.zeros_like(S)
    converged = False
    for it in range(max_iter):
        w, Q = np.linalg.eigh(rho * (Z - U) - S)
        theta = (Q * ((w + np.sqrt(w * w + 4 * rho)) / (2 * rho))) @ Q.T
        Z_old = Z
        Z = project_block_toeplitz(theta + U, n_sensors)
        Z = np.where(diag_mask, Z, _soft(Z, penalty / rho))
        U = U + theta - Z

        r = np.linalg.norm(theta - Z)
        s = rho * np.linalg.norm(Z - Z_old)
        e_pri = n * eps_abs + eps_rel * max(np.linalg.norm(theta), np.linalg.norm(Z))
        e_dual = n * eps_abs + eps_rel * rho * np.linalg.norm(U)
        if it > 0 and r <= e_pri and s <= e_dual:
            converged = True
            break
        # residual balancing
        if r > 10 * s:
            rho *= 2.0
            U /= 2.0
        elif s > 10 * r:
            rho /= 2.0
            U *= 2.0
    return make_positive_definite(Z), converged


def fit_toeplitz_mrf(
    X: np.ndarray,
    lam: float,
    n_sensors: int,
    *,
    cluster_id: int = 0,
    init: np.ndarray | None = None,
    rho: float = 1.0,
    max_iter: int = 1000,
) -> ClusterModel:
    """Sparse block-Toeplitz Gaussian MRF for the windows ``X`` of shape ``(m, n)``.

    ``lam`` weights the L1 term against the summed (not averaged) log-likelihood,
    so the per-sample penalty handed to the solver is ``2 * lam / m``.
    """
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    if m == 0:
        raise ValueError("cannot fit a cluster with no windows")
    if n % n_sensors:
        raise ValueError(f"window length {n} is not a multiple of {n_sensors} sensors")
    S = _empirical_cov(X)
    A, ok = solve_toeplitz_glasso(
        S, 2.0 * lam / m, n_sensors, rho=rho, max_iter=max_iter, init=init
    )
    if not ok:
        log.debug("ADMM did not converge for cluster %d (m=%d)", cluster_id, m)
    return ClusterModel(precision=A, mean=X.mean(axis=0), cluster_id=cluster_id, converged=ok)


# --- EM -----------------------------------------------------------------------

def contiguous_init(T_w: int, r_w: int, K: int) -> np.ndarray:
    seg = np.minimum((np.arange(T_w) * K) // T_w, K - 1)
    return np.repeat(seg[:, None], r_w, axis=1)


def gmm_init(windows: np.ndarray, K: int, seed: int) -> np.ndarray:
    """Full-covariance Gaussian-mixture labels of the windows, shaped ``(T_w, r_w)``."""
    r_w, T_w, n = windows.shape
    flat = windows.transpose(1, 0, 2).reshape(T_w * r_w, n)
    gmm = GaussianMixture(K, covariance_type="full", random_state=seed, max_iter=50, reg_covar=1e-4)
    return gmm.fit(flat).predict(flat).reshape(T_w, r_w)


def local_moment_init(windows: np.ndarray, K: int, seed: int, span: int = 20) -> np.ndarray:
    """k-means labels of locally averaged second moments of each window's newest block.

    States that share a mean differ only in covariance; a short moving average of
    ``x x^T`` exposes that difference to a plain clustering step.
    """
    r_w, T_w, n = windows.shape
    feats = []
    for r in range(r_w):
        x = windows[r]
        iu = np.triu_indices(n)
        prod = (x[:, :, None] * x[:, None, :])[:, iu[0], iu[1]]
        c = np.vstack([np.zeros((1, prod.shape[1])), np.cumsum(prod, axis=0)])
        lo = np.clip(np.arange(T_w) - span // 2, 0, T_w)
        hi = np.clip(np.arange(T_w) + span // 2 + 1, 0, T_w)
        feats.append((c[hi] - c[lo]) / (hi - lo)[:, None])
    F = np.stack(feats, axis=1).reshape(T_w * r_w, -1)
    km = KMeans(K, n_init=4, random_state=seed).fit(F)
    return km.labels_.reshape(T_w, r_w)


def _reseed_empty(assign: np.ndarray, neg_ll: np.ndarray | None, K: int) -> np.ndarray:
    counts = np.bincount(assign.ravel(), minlength=K)
    empty = np.flatnonzero(counts == 0)
    if not len(empty):
        return assign
    assign = assign.copy()
    T_w, r_w = assign.shape
    per = math.ceil(T_w * r_w / K)
    if neg_ll is None:
        own = np.zeros(T_w * r_w)
    else:
        own = np.take_along_axis(neg_ll, assign[:, :, None], axis=2)[:, :, 0].ravel()
    order = np.argsort(-own, kind="stable")
    taken = 0
    for k in empty:
        idx = order[taken: taken + per]
        taken += per
        flat = assign.ravel()
        flat[idx] = k
        assign = flat.reshape(T_w, r_w)
    log.debug("reseeded empty clusters %s", empty.tolist())
    return assign


def _m_step(flat_windows, assign_flat, models, params, n_sensors):
    out = []
    for k in range(params.K):
        X = flat_windows[assign_flat == k]
        prev = models[k] if models else None
        if len(X) == 0:
            out.append(prev)
            continue
        cand = fit_toeplitz_mrf(
            X, params.lam, n_sensors, cluster_id=k,
            init=None if prev is None else prev.precision,
            rho=params.admm_rho, max_iter=params.admm_max_iter,
        )
        # keep the previous model if the approximate solve did not improve on it
        if prev is not None:
            prev_here = replace(prev, mean=X.mean(axis=0))
            if cluster_objective(X, prev_here, params.lam) < cluster_objective(X, cand, params.lam):
                cand = prev_here
        out.append(cand)
    return out


def _em(windows, params, beta, alpha, n_sensors, assign, keep_history):
    r_w, T_w, n = windows.shape
    # flat index i * r_w + r matches assign.ravel() on a (T_w, r_w) array
    flat = windows.transpose(1, 0, 2).reshape(T_w * r_w, n)
    models: list[ClusterModel] = []
    neg_ll = None
    trace: list[float] = []
    history: list[list[np.ndarray]] = []
    best = None
    converged = False
    for it in range(params.max_em_iters):
        assign = _reseed_empty(assign, neg_ll, params.K)
        models = _m_step(flat, assign.ravel(), models, params, n_sensors)
        if keep_history:
            history.append([m.precision.copy() for m in models])
        neg_ll = negll_table(windows, models)
        cost, new_assign = assign_clusters(neg_ll, beta, alpha)
        obj = cost + params.lam * sum(_offdiag_l1(m.precision) for m in models)
        if trace and obj > trace[-1]:
            log.debug("EM iteration %d raised the objective; keeping previous state", it)
            converged = True
            break
        trace.append(obj)
        best = (list(models), new_assign)
        if np.array_equal(new_assign, assign):
            converged = True
            break
        if len(trace) > 1 and abs(trace[-2] - obj) <= params.tol * max(abs(trace[-2]), 1.0):
            converged = True
            break
        assign = new_assign
    models, assign = best
    return models, assign, trace, converged, history


def fit(
    windows: np.ndarray,
    params: TiccGtcParams,
    n_sensors: int,
    *,
    disable_ltc: bool = False,
    disable_gtc: bool = False,
    keep_history: bool = False,
    init_models: list[ClusterModel] | None = None,
    warm_start: list[ClusterModel] | None = None,
) -> ClusteringResult:
    """EM over windows of shape ``(r_w, T_w, N * t_w)`` from aligned runs.

    With ``init_models`` (e.g. an existing profile's clusters) EM starts from the
    assignment those models induce and no other initializations are tried.
    ``warm_start`` models instead add that assignment as one more candidate
    next to the contiguous and mixture-model starts; the lowest objective wins.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 2:
        windows = windows[None]
    r_w, T_w, n = windows.shape
    if n != n_sensors * params.t_w:
        raise ConfigError(f"window length {n} != N * t_w = {n_sensors * params.t_w}")
    if params.K > T_w * r_w:
        raise ConfigError(f"K = {params.K} exceeds the {T_w * r_w} available windows")
    if params.K ** r_w > MAX_JOINT_STATES:
        raise CapacityError(f"K^r_w = {params.K ** r_w} exceeds {MAX_JOINT_STATES}")
    beta = 0.0 if disable_ltc else params.beta
    alpha = 0.0 if disable_gtc else params.alpha

    if init_models is not None:
        if len(init_models) != params.K:
            raise ConfigError(f"{len(init_models)} initial models for K = {params.K}")
        inits = [assign_clusters(negll_table(windows, init_models), beta, alpha)[1]]
    else:
        inits = [contiguous_init(T_w, r_w, params.K)]
    if params.K > 1 and init_models is None:
        inits += [local_moment_init(windows, params.K, params.seed, s) for s in params.init_spans]
        inits += [gmm_init(windows, params.K, params.seed + i) for i in range(params.n_restarts)]
    if warm_start is not None and init_models is None:
        if len(warm_start) != params.K or warm_start[0].dim != n:
            raise ConfigError("warm-start models do not match K or the window length")
        inits.append(assign_clusters(negll_table(windows, warm_start), beta, alpha)[1])

    best = None
    for init in inits:
        res = _em(windows, params, beta, alpha, n_sensors, init, keep_history)
        if best is None or res[2][-1] < best[2][-1]:
            best = res
    models, assign, trace, converged, history = best
    return ClusteringResult(
        models=models,
        assignments=assign,
        objective_trace=trace,
        t_w=params.t_w,
        n_sensors=n_sensors,
        converged=converged,
        history=history,
    )


def params_dict(params: TiccGtcParams) -> dict:
    return asdict(params)
