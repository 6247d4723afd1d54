import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import eer_sweep_oracle, identity_model

from codealign import verify
from codealign.backbone import embed
from codealign.errors import CompatibilityError, InputError, MetricError, ProtocolError
from codealign.features import Observations
from codealign.verify import ScoreSet


def _obs(values, ids):
    values = np.asarray(values, dtype=float)
    return Observations(values, np.asarray(ids), np.zeros(len(ids), dtype=np.int64))


def _scores(gen, imp):
    s = np.concatenate([gen, imp]).astype(float)
    return ScoreSet(s, np.r_[np.ones(len(gen), bool), np.zeros(len(imp), bool)])


def test_eer_perfect_separation():
    assert verify.compute_eer(_scores([0.9, 0.8], [0.2, 0.1])).eer == 0.0


def test_eer_identical_lists():
    x = np.random.default_rng(0).standard_normal(30)
    assert verify.compute_eer(_scores(x, x)).eer == pytest.approx(0.5, abs=1e-12)


def test_eer_single_class_errors():
    with pytest.raises(MetricError):
        verify.compute_eer(ScoreSet(np.ones(3), np.ones(3, bool)))
    with pytest.raises(MetricError):
        verify.compute_eer(ScoreSet(np.ones(3), np.zeros(3, bool)))
    with pytest.raises(MetricError):
        verify.compute_eer(ScoreSet(np.empty(0), np.empty(0, bool)))


@pytest.mark.parametrize("seed", range(5))
def test_eer_matches_sweep_oracle_200(seed):
    rng = np.random.default_rng(seed)
    gen = rng.normal(1.0, 1.0, 60)
    imp = rng.normal(0.0, 1.0, 140)
    assert verify.compute_eer(_scores(gen, imp)).eer == pytest.approx(eer_sweep_oracle(gen, imp), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), ng=st.integers(1, 40), ni=st.integers(1, 40),
       discrete=st.booleans())
def test_eer_oracle_property(seed, ng, ni, discrete):
    rng = np.random.default_rng(seed)
    gen, imp = rng.normal(0.7, 1, ng), rng.normal(0, 1, ni)
    if discrete:  # many ties
        gen, imp = np.round(gen), np.round(imp)
    res = verify.compute_eer(_scores(gen, imp))
    assert res.eer == pytest.approx(eer_sweep_oracle(gen, imp), abs=1e-9)
    assert abs(res.far_at_threshold - res.frr_at_threshold) <= res.crossing_gap + 1e-15


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(0.01, 100), b=st.floats(-100, 100))
def test_eer_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    gen, imp = rng.normal(1, 1, 30), rng.normal(0, 1, 50)
    e0 = verify.compute_eer(_scores(gen, imp)).eer
    e1 = verify.compute_eer(_scores(a * gen + b, a * imp + b)).eer
    assert e1 == pytest.approx(e0, abs=1e-9)


def test_rates_at_exact_crossing():
    gen, imp = np.array([3.0, 2.0, 0.5]), np.array([2.5, 1.0, 0.0])
    res = verify.compute_eer(_scores(gen, imp))
    far, frr = verify.rates_at(_scores(gen, imp), res.threshold)
    assert far == frr
    assert res.eer == pytest.approx(far, abs=1e-12)
    assert res.threshold == 2.0


def test_roc_contract_and_perfect_separation():
    grid, gar = verify.compute_roc(_scores([0.9, 0.8], [0.2, 0.1]), 11)
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert gar[0] == 1.0 and np.all(gar == 1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 200))
def test_roc_monotone_with_endpoints(seed, n):
    rng = np.random.default_rng(seed)
    s = _scores(rng.normal(0.5, 1, n), rng.normal(0, 1, n + 3))
    grid, gar = verify.compute_roc(s, 21)
    assert np.all(np.diff(gar) >= 0)
    assert gar[-1] == 1.0
    gar_min = np.mean(s.genuine_scores > s.impostor_scores.max())
    assert gar[0] == pytest.approx(gar_min)


def test_roc_identical_distributions_near_diagonal():
    rng = np.random.default_rng(1)
    s = _scores(rng.standard_normal(10_000), rng.standard_normal(10_000))
    grid, gar = verify.compute_roc(s, 101)
    assert np.max(np.abs(gar - grid)) < 0.1


def test_roc_at_eer_threshold_crossing_consistency():
    rng = np.random.default_rng(2)
    s = _scores(rng.normal(1, 1, 400), rng.normal(0, 1, 400))
    res = verify.compute_eer(s)
    far, frr = verify.rates_at(s, res.threshold)
    assert abs((1 - frr) - (1 - far)) <= 2.0 / 400


def test_score_pairs_counting_and_max_score():
    m = identity_model(2)
    gal = verify.enroll(m, _obs([[0, 0], [5, 5]], [1, 2]))
    q = _obs([[0, 0], [5, 4]], [1, 2])
    s = verify.score_pairs(m, gal, q)
    assert len(s.scores) == 4 and s.genuine.sum() == 2
    assert s.scores[0] == 0.0 == s.scores.max()


def test_score_pairs_label_join_oracle():
    rng = np.random.default_rng(3)
    m = identity_model(4)
    g = _obs(rng.standard_normal((12, 4)), rng.integers(0, 4, 12))
    q = _obs(rng.standard_normal((9, 4)), rng.integers(0, 4, 9))
    s = verify.score_pairs(m, verify.enroll(m, g), q)
    k = 0
    for i in range(9):
        for j in range(12):
            assert s.genuine[k] == (q.identities[i] == g.identities[j])
            assert s.scores[k] == pytest.approx(-np.sum((q.values[i] - g.values[j]) ** 2), rel=1e-12)
            k += 1


def test_cosine_scores():
    m = identity_model(2)
    gal = verify.enroll(m, _obs([[1, 0], [0, 2]], [0, 1]))
    s = verify.score_pairs(m, gal, _obs([[3, 0]], [0]), kind="cosine")
    assert np.allclose(s.scores, [1.0, 0.0])
    with pytest.raises(ValueError):
        verify.similarity_matrix(np.ones((1, 2)), np.ones((1, 2)), "hamming")


def test_empty_inputs():
    m = identity_model(2)
    with pytest.raises(InputError):
        verify.enroll(m, _obs(np.empty((0, 2)), []))
    gal = verify.GalleryTemplateSet(np.array([], dtype=int), np.empty((0, 2)))
    with pytest.raises(InputError):
        verify.score_pairs(m, gal, _obs([[0, 0]], [0]))


def test_enroll_dimension_mismatch():
    with pytest.raises(CompatibilityError):
        verify.enroll(identity_model(2), _obs(np.zeros((2, 3)), [0, 1]))


def test_enroll_reductions():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((5, 3))
    cb = rng.standard_normal((4, 3))
    m0 = identity_model(3, codebook=cb, alpha=0.0)
    t = verify.enroll(m0, _obs(X, range(5)))
    assert np.array_equal(t.templates, embed(m0.backbone, X))
    dup = verify.enroll(m0, _obs(X[[1, 1]], [1, 1]))
    assert np.array_equal(dup.templates[0], dup.templates[1])
    m1 = identity_model(3, codebook=cb[:1], alpha=1.0)
    t1 = verify.enroll(m1, _obs(X, range(5)))
    assert np.all(t1.templates == t1.templates[0])


def test_symmetric_alignment_path():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((6, 3))
    m = identity_model(3, codebook=rng.standard_normal((4, 3)), alpha=0.3)
    gal = verify.enroll(m, _obs(X, range(6)))
    s = verify.score_pairs(m, gal, _obs(X, range(6)))
    # each sample scored against its own template is exactly 0
    S = s.scores.reshape(6, 6)
    assert np.all(np.diag(S) == 0.0)


def _rank1_oracle(S, q_ids, g_ids):
    hits = 0
    for i, qi in enumerate(q_ids):
        best = {}
        for j, gj in enumerate(g_ids):
            best[gj] = max(best.get(gj, -np.inf), S[i, j])
        top = max(best.values())
        winners = [g for g, v in best.items() if v == top]
        hits += winners == [qi]
    return hits / len(q_ids)


def test_rank1_examples():
    m = identity_model(2)
    g = _obs([[0, 0], [10, 0], [0, 10]], [0, 1, 2])
    assert verify.rank1_accuracy(m, verify.enroll(m, g), _obs([[0, 0.1], [9, 0]], [0, 1])) == 1.0
    single = verify.enroll(m, _obs([[1, 1], [2, 2]], [7, 7]))
    assert verify.rank1_accuracy(m, single, _obs([[5, 5], [-3, 0]], [7, 7])) == 1.0


def test_rank1_tie_is_failure():
    m = identity_model(1)
    g = verify.enroll(m, _obs([[-1.0], [1.0]], [0, 1]))
    assert verify.rank1_accuracy(m, g, _obs([[0.0]], [0])) == 0.0


def test_rank1_missing_identity():
    m = identity_model(2)
    g = verify.enroll(m, _obs([[0, 0]], [0]))
    with pytest.raises(ProtocolError):
        verify.rank1_accuracy(m, g, _obs([[0, 0]], [3]))


@pytest.mark.parametrize("seed", range(5))
def test_rank1_argmax_join_oracle(seed):
    rng = np.random.default_rng(seed)
    m = identity_model(3)
    g = _obs(np.round(rng.standard_normal((15, 3)), 1), np.repeat(np.arange(5), 3))
    q = _obs(np.round(rng.standard_normal((20, 3)), 1), rng.integers(0, 5, 20))
    gal = verify.enroll(m, g)
    S = verify.similarity_matrix(q.values, gal.templates)
    assert verify.rank1_accuracy(m, gal, q) == _rank1_oracle(S, q.identities, g.identities)


def test_rank1_zero_noise_distinct_means():
    rng = np.random.default_rng(6)
    mu = rng.standard_normal((8, 4)) * 3
    m = identity_model(4)
    g = verify.enroll(m, _obs(mu, range(8)))
    assert verify.rank1_accuracy(m, g, _obs(mu, range(8))) == 1.0


def test_gi_histogram_counts():
    s = _scores([0.9], [0.1])
    edges, g, i = verify.gi_histogram(s, 10)
    assert np.count_nonzero(g) == 1 and np.count_nonzero(i) == 1
    rng = np.random.default_rng(7)
    s = _scores(rng.standard_normal(37), rng.standard_normal(81))
    edges, g, i = verify.gi_histogram(s, 13)
    assert g.sum() == 37 and i.sum() == 81 and len(edges) == 14
    assert edges[0] == s.scores.min() and edges[-1] == s.scores.max()
    with pytest.raises(MetricError):
        verify.gi_histogram(ScoreSet(np.ones(2), np.ones(2, bool)))


def test_result_files(tmp_path):
    rng = np.random.default_rng(8)
    s = _scores(rng.normal(1, 1, 20), rng.normal(0, 1, 30))
    verify.write_roc_csv(tmp_path / "roc.csv", *verify.compute_roc(s, 5))
    verify.write_gi_csv(tmp_path / "gi.csv", *verify.gi_histogram(s, 4))
    roc = list(csv.reader(open(tmp_path / "roc.csv")))
    gi = list(csv.reader(open(tmp_path / "gi.csv")))
    assert roc[0] == ["far", "gar"] and len(roc) == 6
    assert gi[0] == ["bin_left", "bin_right", "genuine_count", "impostor_count"] and len(gi) == 5
    md = verify.metrics_dict(verify.compute_eer(s), 0.5, s)
    assert set(md) == {"eer", "acc", "threshold", "n_genuine", "n_impostor"}
    assert md["n_genuine"] == 20 and md["n_impostor"] == 30
