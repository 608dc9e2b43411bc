import numpy as np
import pytest

from rcae2e.dataset import standardize
from rcae2e.profile import (
    AveragedProfile,
    MonitorState,
    Profile,
    ThresholdConfig,
    anomaly_threshold,
    build_averaged_profile,
    cosine_distance,
    detect_anomalous_run,
    fit_profile,
    profile_difference,
)
from rcae2e.synthgen import SynthConfig, generate
from rcae2e.ticc_gtc import ClusteringResult, ClusterModel, TiccGtcParams


def _profile(mats, assign, t_w=1):
    models = [ClusterModel(precision=m, mean=np.zeros(len(m)), cluster_id=k) for k, m in enumerate(mats)]
    cl = ClusteringResult(models=models, assignments=np.asarray(assign), objective_trace=[0.0],
                          t_w=t_w, n_sensors=len(mats[0]) // t_w)
    return Profile(run_window_end=0, run_ids=("0",), clustering=cl, params=TiccGtcParams(K=len(mats), t_w=t_w))


M1 = np.array([[2.0, 0.5], [0.5, 1.0]])
M2 = np.array([[1.0, -0.3], [-0.3, 3.0]])


def test_single_run_average_is_the_sequence():
    p = _profile([M1, M2], [[0], [1], [1], [0]])
    avg = build_averaged_profile(p)
    for got, k in zip(avg.mrfs, [0, 1, 1, 0]):
        np.testing.assert_array_equal(got, [M1, M2][k])


def test_average_of_two_runs():
    p = _profile([M1, M2], [[0, 0], [0, 1], [1, 0]])
    avg = build_averaged_profile(p)
    np.testing.assert_array_equal(avg.mrfs[0], M1)
    np.testing.assert_allclose(avg.mrfs[1], (M1 + M2) / 2)
    # same multiset of clusters -> one shared object
    assert avg.mrfs[1] is avg.mrfs[2]


def test_cosine_distance_cases():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    assert cosine_distance(A, A) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance(A, 2 * A) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == 1.0
    assert cosine_distance(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0
    assert cosine_distance(np.zeros((2, 2)), A[:2, :2]) == 1.0
    assert 0.0 <= cosine_distance(A, -A + rng.normal(size=(3, 3))) <= 1.0


def test_profile_difference_scores():
    a = AveragedProfile([M1, M2], t_w=1)
    assert profile_difference(a, a).score == pytest.approx(0.0, abs=1e-12)
    assert profile_difference(a, AveragedProfile([2 * M1, 2 * M2], 1)).score == pytest.approx(0.0, abs=1e-12)
    d = AveragedProfile([np.diag([1.0, 0.0])] * 2, 1)
    e = AveragedProfile([np.array([[0.0, 1.0], [1.0, 0.0]])] * 2, 1)
    assert profile_difference(d, e).score == 1.0
    with pytest.raises(ValueError):
        profile_difference(a, AveragedProfile([M1], 1))


def test_threshold_examples():
    hist = [0.01, 0.012, 0.011, 0.009, 0.01]
    # median 0.01, MAD 0.001 -> 0.013, below the 0.05 floor
    assert anomaly_threshold(hist) == 0.05
    assert anomaly_threshold(hist, ThresholdConfig(floor=0.0)) == pytest.approx(0.013)
    assert detect_anomalous_run(hist, 0.25) == "anomalous"
    assert detect_anomalous_run(hist, 0.0) == "normal"
    assert detect_anomalous_run([], 0.04) == "normal"
    assert detect_anomalous_run([], 0.06) == "anomalous"
    with pytest.raises(ValueError):
        detect_anomalous_run([], -0.1)


def test_profile_json_round_trip(tmp_path):
    p = _profile([M1, M2], [[0, 1], [1, 1]])
    p.save(tmp_path / "p.json")
    q = Profile.load(tmp_path / "p.json")
    assert q.params == p.params
    np.testing.assert_array_equal(q.clustering.assignments, p.clustering.assignments)
    assert q.mrf_at(1, 1).cluster_id == 1


@pytest.fixture(scope="module")
def runs():
    data, _ = generate(SynthConfig(N=6, T=120, R=5, K=2, segment_length=30, anomaly_count=0, seed=1), inject=False)
    std, _ = standardize(data)
    return list(std.runs)


def test_monitor_warmup_and_comparisons(runs):
    state = MonitorState(TiccGtcParams(K=2, r_w=2))
    assert state.advance(runs[0]) is None
    assert state.advance(runs[1]) is None
    assert state.new_profile is not None and state.old_profile is None
    rep = state.advance(runs[2])
    assert rep is not None and state.old_profile is not None
    state.advance(runs[3])
    assert state.n_comparisons == 2
    assert len(state.runs) == 2


def test_monitor_all_normal(runs):
    state = MonitorState(TiccGtcParams(K=2, r_w=2))
    reports = [state.advance(r) for r in runs]
    verdicts = [r.verdict for r in reports if r is not None]
    assert verdicts == ["normal"] * 3
    assert all(0.0 <= r.score <= 1.0 for r in reports if r is not None)


def test_fit_profile_covers_every_window(runs):
    p = fit_profile(runs[:2], TiccGtcParams(K=2, t_w=2), run_ids=["a", "b"])
    assert p.clustering.assignments.shape == (119, 2)
    assert len(build_averaged_profile(p)) == 119
