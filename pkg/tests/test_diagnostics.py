import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import identity_model
from codealign import diagnostics as dg
from codealign import runner
from codealign.bridge import Codebook
from codealign.config import load_config, shipped_config
from codealign.errors import InputError
from codealign.features import Observations, WorldConfig, generate_world, make_openset_split
from codealign.trainer import TrainConfig, train


def _obs(values, ids):
    return Observations(np.asarray(values, float), np.asarray(ids), np.zeros(len(ids), np.int64))


def test_single_codeword_everything_collides():
    rng = np.random.default_rng(0)
    m = identity_model(3, codebook=rng.standard_normal((1, 3)), alpha=0.3)
    obs = _obs(rng.standard_normal((20, 3)), np.repeat(np.arange(5), 4))
    stats = dg.assignment_stats(m, obs, 50, rng)
    assert stats.p_same == 1.0 and stats.p_collide == 1.0


def test_zero_noise_pairs_always_agree():
    rng = np.random.default_rng(1)
    m = identity_model(4, codebook=rng.standard_normal((16, 4)), alpha=0.3)
    mu = rng.standard_normal((6, 4))
    obs = _obs(np.repeat(mu, 3, axis=0), np.repeat(np.arange(6), 3))
    assert dg.assignment_stats(m, obs, 100, rng).p_same == 1.0


def test_codewords_as_identity_means_never_collide():
    P = np.eye(4) * 5
    m = identity_model(4, codebook=P, alpha=0.5)
    obs = _obs(np.repeat(P, 2, axis=0), np.repeat(np.arange(4), 2))
    stats = dg.assignment_stats(m, obs, 100)
    assert stats.p_collide == 0.0 and stats.p_same == 1.0
    # distinct identities stay distinct after alignment
    t = m.features(P)
    assert len({tuple(r) for r in t}) == 4


def test_pair_estimators_and_errors():
    m = identity_model(2, codebook=[[0, 0], [10, 0]], alpha=0.3)
    a = np.array([[1.0, 0], [9, 0], [4, 0]])
    b = np.array([[-1.0, 0], [11, 0], [6, 0]])
    s = dg.estimate_p_same(m, a, b)
    assert s.p_same == pytest.approx(2 / 3) and s.n_genuine_pairs == 3
    assert dg.estimate_p_collide(m, a, b).p_collide == pytest.approx(2 / 3)
    with pytest.raises(InputError):
        dg.estimate_p_same(m, np.empty((0, 2)), np.empty((0, 2)))
    with pytest.raises(InputError):
        dg.sample_pairs([1, 2, 3], True, 10, np.random.default_rng(0))


def test_sample_pairs_kinds():
    ids = np.array([0, 0, 1, 1, 1, 2])
    rng = np.random.default_rng(0)
    g = dg.sample_pairs(ids, True, 100, rng)
    assert len(g) == 4 and np.all(ids[g[:, 0]] == ids[g[:, 1]]) and np.all(g[:, 0] < g[:, 1])
    i = dg.sample_pairs(ids, False, 5, rng)
    assert len(i) == 5 and np.all(ids[i[:, 0]] != ids[i[:, 1]])


def _trained(seed=0):
    w = generate_world(WorldConfig(num_identities=12, dim=6, raw_dim=8, nuisance_sigma=0.4), seed)
    split = make_openset_split(w, "intra", seed, train_per_identity=6, eval_per_identity=4)
    return train(split, TrainConfig(K=10, epochs=3, batch_size=8, seed=seed)), split


def test_assignment_stats_invariant_to_blend():
    m, split = _trained()
    ref = dg.assignment_stats(m, split.query, 300, np.random.default_rng(5))
    for a in (0.0, 0.3, 0.9):
        s = dg.assignment_stats(m.with_alpha(a), split.query, 300, np.random.default_rng(5))
        assert (s.p_same, s.p_collide) == (ref.p_same, ref.p_collide)


@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5, 0.9])
def test_contraction_exact_on_constructed_pairs(alpha):
    rng = np.random.default_rng(7)
    cb = Codebook(rng.standard_normal((32, 8)))
    a, b = dg.same_cell_pairs(cb, 2000, rng)
    rep = dg.contraction_from_features(a, b, cb, alpha)
    assert rep.n_same_cell_pairs == 2000 and rep.warning is None
    assert rep.max_abs_deviation_exact / (1 - alpha) ** 2 < 1e-9
    # the single-power factor is off by alpha * (1 - alpha)
    assert rep.stated_factor_deviation == pytest.approx(-alpha * (1 - alpha), rel=1e-9)


def test_contraction_stated_deviation_at_default_blend():
    rng = np.random.default_rng(8)
    cb = Codebook(rng.standard_normal((8, 4)))
    rep = dg.contraction_from_features(*dg.same_cell_pairs(cb, 200, rng), cb, 0.3)
    assert rep.stated_factor_deviation == pytest.approx(-0.21, rel=1e-9)
    assert rep.mean_ratio == pytest.approx(0.49, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), K=st.integers(1, 20), D=st.integers(1, 10),
       alpha=st.floats(0.0, 0.99))
def test_same_cell_pairs_property(seed, K, D, alpha):
    rng = np.random.default_rng(seed)
    cb = Codebook(rng.standard_normal((K, D)))
    a, b = dg.same_cell_pairs(cb, 50, rng)
    rep = dg.contraction_from_features(a, b, cb, alpha)
    assert rep.n_same_cell_pairs == 50
    assert rep.max_abs_deviation_exact <= 1e-9 * (1 - alpha) ** 2


def test_contraction_without_same_cell_pairs_warns(caplog):
    cb = Codebook([[0.0], [10.0]])
    with caplog.at_level(logging.WARNING):
        rep = dg.contraction_from_features([[1.0]], [[9.0]], cb, 0.3)
    assert rep.n_same_cell_pairs == 0 and rep.warning
    assert np.isnan(rep.mean_ratio)
    assert "same-cell" in caplog.text
    d = dg.diagnostics_dict(dg.AssignmentStats(), rep, dg.Utilization(np.zeros(2, int), 2))
    assert d["contraction"]["exact_dev"] is None


def test_verify_contraction_on_model():
    m, split = _trained(1)
    q = split.query
    pairs = dg.sample_pairs(q.identities, True, 500, np.random.default_rng(0))
    rep = dg.verify_contraction(m, q.values[pairs[:, 0]], q.values[pairs[:, 1]], 0.3)
    if rep.n_same_cell_pairs:
        assert rep.max_abs_deviation_exact / 0.49 < 1e-9


def test_utilization_counts():
    rng = np.random.default_rng(2)
    P = rng.standard_normal((6, 3))
    m = identity_model(3, codebook=P, alpha=0.3)
    u = dg.codebook_utilization(m, P)
    assert np.all(u.counts == 1) and u.dead == 0
    X = rng.standard_normal((40, 3))
    u = dg.codebook_utilization(m, X)
    assert u.counts.sum() == 40 and u.dead == int(np.sum(u.counts == 0))
    assert u.dead_fraction == u.dead / 6


def test_diagnostics_dict_schema():
    rng = np.random.default_rng(3)
    cb = Codebook(rng.standard_normal((4, 2)))
    rep = dg.contraction_from_features(*dg.same_cell_pairs(cb, 10, rng), cb, 0.3)
    d = dg.diagnostics_dict(dg.AssignmentStats(0.5, 0.1, 10, 20), rep,
                            dg.Utilization(np.array([1, 0, 2, 3]), 1), {"alpha": 0.3})
    assert {"p_same", "p_collide", "contraction", "utilization", "dead_fraction", "alpha"} <= set(d)
    assert d["dead_fraction"] == 0.25 and d["utilization"] == [1, 0, 2, 3]


def test_codebook_sized_to_training_identities_keeps_genuine_pairs_together():
    cfg = load_config(shipped_config("canonical"))
    n_train = round(cfg["world"]["num_identities"] * cfg["protocol"]["train_identity_fraction"])
    cfg = cfg.replace("model", K=n_train)
    split = runner.build_split(cfg, 0)
    model = train(split, cfg.train_config("joint", 0))
    stats = dg.assignment_stats(model, split.train, 1000, np.random.default_rng(0))
    assert stats.n_genuine_pairs == 1000
    assert stats.p_same > 0.9
