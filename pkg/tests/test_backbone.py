import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codealign.backbone import (
    BackboneParams,
    embed,
    embed_backward,
    init_backbone,
    task_loss_and_grad,
)
from codealign.errors import DimensionError, LabelError
from codealign.losses import finite_difference_check


def _params(rng, R=5, D=3, C=4):
    return init_backbone(R, D, C, rng)


def test_identity_block_recovers_mean():
    D, R = 3, 5
    rng = np.random.default_rng(0)
    lift, _ = np.linalg.qr(rng.standard_normal((R, D)))
    mu = rng.standard_normal(D)
    p = BackboneParams(lift.T.copy(), np.zeros(D), np.zeros((2, D)), np.zeros(2))
    assert np.allclose(embed(p, lift @ mu), mu, atol=1e-12)


def test_zero_weight_constant_bias():
    p = BackboneParams(np.zeros((3, 4)), np.full(3, 2.5), np.zeros((2, 3)), np.zeros(2))
    X = np.random.default_rng(1).standard_normal((6, 4))
    assert np.array_equal(embed(p, X), np.full((6, 3), 2.5))


def test_embed_matches_loop_oracle():
    rng = np.random.default_rng(2)
    p = _params(rng, R=7, D=4)
    X = rng.standard_normal((10, 7))
    oracle = np.array([[sum(p.weight[d, r] * x[r] for r in range(7)) + p.bias[d]
                        for d in range(4)] for x in X])
    assert np.allclose(embed(p, X), oracle, rtol=1e-12, atol=1e-12)


def test_embed_shape_mismatch():
    p = _params(np.random.default_rng(0))
    with pytest.raises(DimensionError):
        embed(p, np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_embed_affine(a, b, seed):
    rng = np.random.default_rng(seed)
    p = _params(rng)
    x1, x2 = rng.standard_normal(5), rng.standard_normal(5)
    lhs = embed(p, a * x1 + b * x2)
    rhs = a * embed(p, x1) + b * embed(p, x2) - (a + b - 1) * p.bias
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_uniform_logits_loss_is_log_c():
    C = 6
    p = BackboneParams(np.zeros((3, 2)), np.zeros(3), np.zeros((C, 3)), np.zeros(C))
    loss, _ = task_loss_and_grad(p, np.random.default_rng(0).standard_normal((4, 3)), [0, 1, 5, 2])
    assert loss == pytest.approx(np.log(C), rel=1e-15)


def test_large_margin_loss_goes_to_zero():
    C, D = 3, 3
    losses = []
    for margin in (1.0, 10.0, 100.0):
        p = BackboneParams(np.zeros((D, 1)), np.zeros(D), margin * np.eye(C), np.zeros(C))
        loss, _ = task_loss_and_grad(p, np.eye(D), [0, 1, 2])
        losses.append(loss)
    assert losses[0] > losses[1] > losses[2] >= 0
    assert losses[2] < 1e-40


def test_label_outside_training_set():
    p = _params(np.random.default_rng(0))
    with pytest.raises(LabelError):
        task_loss_and_grad(p, np.zeros((2, 3)), [0, 4])
    with pytest.raises(LabelError):
        task_loss_and_grad(p, np.zeros((2, 3)), [-1, 0])


def _flat_task_objective(p, raw, labels):
    """Loss as a function of (weight, bias, classifier_weight, classifier_bias) flattened."""
    shapes = [v.shape for v in p.as_dict().values()]
    sizes = [int(np.prod(s)) for s in shapes]

    def unflat(x):
        parts = np.split(x, np.cumsum(sizes)[:-1])
        return BackboneParams(*[q.reshape(s) for q, s in zip(parts, shapes)])

    def f(x):
        q = unflat(x)
        z = embed(q, raw)
        loss, g = task_loss_and_grad(q, z, labels)
        gw, gb = embed_backward(raw, g.features)
        return loss, np.concatenate([gw.ravel(), gb.ravel(), g.classifier_weight.ravel(),
                                     g.classifier_bias.ravel()])

    x0 = np.concatenate([v.ravel() for v in p.as_dict().values()])
    return f, x0


@pytest.mark.parametrize("seed", range(5))
def test_task_gradients_finite_difference(seed):
    rng = np.random.default_rng(seed)
    p = _params(rng, R=4, D=3, C=5)
    raw = rng.standard_normal((6, 4))
    labels = rng.integers(0, 5, size=6)
    f, x0 = _flat_task_objective(p, raw, labels)
    assert finite_difference_check(f, x0, 1e-6) < 1e-5


def test_feature_gradient_finite_difference():
    rng = np.random.default_rng(9)
    p = _params(rng, D=4, C=3)
    labels = np.array([0, 2, 1])
    z0 = rng.standard_normal((3, 4))

    def f(x):
        loss, g = task_loss_and_grad(p, x.reshape(3, 4), labels)
        return loss, g.features.ravel()

    assert finite_difference_check(f, z0.ravel(), 1e-6) < 1e-5


def test_loss_nonnegative_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = _params(rng)
        loss, _ = task_loss_and_grad(p, 5 * rng.standard_normal((4, 3)), rng.integers(0, 4, 4))
        assert loss >= 0


def test_checksum_and_roundtrip():
    p = _params(np.random.default_rng(0))
    q = BackboneParams.from_dict({k: v.tolist() for k, v in p.as_dict().items()})
    assert q.checksum() == p.checksum()
    q.bias[0] += 1e-12
    assert q.checksum() != p.checksum()
