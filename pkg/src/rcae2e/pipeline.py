"""End-to-end stages: profile the normal runs, refit the anomalous run, score it."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .dataset import RunDataset, StandardizationStats, standardize, window_matrix
from .profile import AveragedProfile, Profile, build_averaged_profile, fit_profile
from .rca_scc import RcaParams, ScoreSeries, rank_sensors, score_windows
from .ticc_gtc import TiccGtcParams, fit

log = logging.getLogger(__name__)


class StateError(RuntimeError):
    pass


@dataclass
class RankResult:
    scores: ScoreSeries
    ranking: list[tuple[str | int, float]]
    observed_assignments: np.ndarray


def refit_anomalous_run(run: np.ndarray, params: TiccGtcParams, init_models=None):
    """Per-window MRFs for a single run: K clusters, no temporal consistency.

    EM is seeded from ``init_models`` (the old profile's clusters) when given.
    ``lam`` weights a summed log-likelihood, so it is divided by ``r_w`` here to
    keep the per-sample penalty equal to the profile fit's; otherwise the refit
    shrinks every edge harder and healthy edges read as vanished.
    """
    single = replace(params, r_w=1, lam=params.lam / params.r_w)
    windows = window_matrix(run, params.t_w)[None]
    return fit(windows, single, run.shape[0], disable_ltc=True, disable_gtc=True,
               init_models=init_models)


@dataclass
class RankInputs:
    """Per-window ground-truth and observed MRFs for one anomalous run."""

    ground_truth: list[np.ndarray]
    observed: list[np.ndarray]
    observed_assignments: np.ndarray
    n_sensors: int
    t_w: int


def rank_inputs(
    run: np.ndarray,
    old_profile: Profile | AveragedProfile | None,
    params: TiccGtcParams,
) -> RankInputs:
    """Refit a standardized ``(N, T)`` run and pair each window with the old profile's MRF."""
    if old_profile is None:
        raise StateError("no old profile available; monitor at least r_w + 1 runs first")
    gt = old_profile if isinstance(old_profile, AveragedProfile) else build_averaged_profile(old_profile)
    if gt.t_w != params.t_w:
        raise StateError(f"profile window size {gt.t_w} != configured t_w {params.t_w}")
    init = old_profile.models if isinstance(old_profile, Profile) else None
    refit = refit_anomalous_run(run, params, init)
    mats = [m.precision for m in refit.models]
    observed = [mats[k] for k in refit.assignments[:, 0]]
    if len(observed) != len(gt):
        raise StateError(f"run has {len(observed)} windows but profile has {len(gt)}")
    return RankInputs(gt.mrfs, observed, refit.assignments[:, 0], run.shape[0], params.t_w)


def score_inputs(inputs: RankInputs, rca: RcaParams, sensor_names=None) -> RankResult:
    scores = score_windows(inputs.ground_truth, inputs.observed, inputs.n_sensors, inputs.t_w, rca)
    return RankResult(
        scores=scores,
        ranking=rank_sensors(scores.point_scores, sensor_names),
        observed_assignments=inputs.observed_assignments,
    )


def rank_run(
    run: np.ndarray,
    old_profile: Profile | AveragedProfile | None,
    params: TiccGtcParams,
    rca: RcaParams,
    sensor_names=None,
) -> RankResult:
    """Score a standardized ``(N, T)`` run against the old profile's per-timestamp MRFs."""
    return score_inputs(rank_inputs(run, old_profile, params), rca, sensor_names)


def profile_target(
    data: RunDataset,
    train_runs: list[int],
    target_run: int,
    params: TiccGtcParams,
) -> tuple[RankInputs, Profile, StandardizationStats]:
    """Standardize on ``train_runs``, profile them, and refit ``target_run`` against it."""
    train = data.subset(train_runs)
    train_std, stats = standardize(train)
    target_std, _ = standardize(data.subset([target_run]), stats)
    profile = fit_profile(list(train_std.runs), params, run_window_end=train_runs[-1],
                          run_ids=train_std.run_ids)
    return rank_inputs(target_std.runs[0], profile, params), profile, stats


def profile_and_rank(
    data: RunDataset,
    train_runs: list[int],
    target_run: int,
    params: TiccGtcParams,
    rca: RcaParams,
) -> tuple[RankResult, Profile, StandardizationStats]:
    """Standardize on ``train_runs``, profile them, then rank ``target_run``."""
    inputs, profile, stats = profile_target(data, train_runs, target_run, params)
    return score_inputs(inputs, rca, data.sensor_names), profile, stats
