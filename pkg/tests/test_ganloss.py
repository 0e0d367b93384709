import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxgan import diffmath as dm
from boxgan.diffmath import Tensor
from boxgan.ganloss import (EmptyBatchError, GanBatchScores, clip_weights, critic_loss, generator_loss,
                            gradient_penalty, interpolate, wasserstein_estimate)
from boxgan.netzoo import Critic, CriticSpec
from oracles import numeric_grad, rel_err


def test_score_examples():
    s = GanBatchScores(np.array([1.0, 3.0]), np.array([0.0, 2.0]))
    assert critic_loss(s).item() == -1.0
    assert generator_loss(np.array([0.0, 2.0])).item() == -1.0
    assert wasserstein_estimate(s).item() == 1.0
    assert generator_loss(np.zeros(4)).item() == 0.0


def test_equal_and_constant_batches_give_zero():
    x = np.array([0.3, -1.2, 4.0])
    assert critic_loss(GanBatchScores(x, x.copy())).item() == 0.0
    assert critic_loss(GanBatchScores(np.full(3, 2.5), np.full(5, 2.5))).item() == 0.0


def test_empty_and_non_finite_rejected():
    with pytest.raises(EmptyBatchError):
        GanBatchScores(np.array([]), np.array([1.0]))
    with pytest.raises(EmptyBatchError):
        generator_loss(np.array([]))
    with pytest.raises(FloatingPointError):
        GanBatchScores(np.array([np.inf]), np.array([1.0]))


def test_identities_on_1000_random_batches():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        real = rng.normal(size=rng.integers(1, 20)) * rng.uniform(0.1, 100)
        fake = rng.normal(size=rng.integers(1, 20)) * rng.uniform(0.1, 100)
        s = GanBatchScores(real, fake)
        c = critic_loss(s).item()
        assert c + generator_loss(fake).item() + np.mean(real) == pytest.approx(0.0, abs=1e-12 * (1 + abs(c)))
        assert wasserstein_estimate(s).item() == -c


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), st.lists(st.floats(-1e3, 1e3), min_size=1,
                                                                        max_size=10), st.floats(-50, 50))
def test_losses_scale_linearly(real, fake, k):
    real, fake = np.array(real), np.array(fake)
    s, sk = GanBatchScores(real, fake), GanBatchScores(k * real, k * fake)
    for f in (critic_loss, wasserstein_estimate):
        assert f(sk).item() == pytest.approx(k * f(s).item(), rel=1e-9, abs=1e-9)
    assert generator_loss(k * fake).item() == pytest.approx(k * generator_loss(fake).item(), rel=1e-9, abs=1e-9)


def test_linear_critic_penalty_closed_form():
    w = np.array([0.0, 2.0])
    real = np.random.default_rng(1).normal(size=(4, 2))
    fake = np.random.default_rng(2).normal(size=(4, 2))

    def critic(x):
        return dm.sum(x * Tensor(w), axis=1)

    for lam in (1.0, 10.0, 3.5):
        assert gradient_penalty(critic, real, fake, lam, rng=np.random.default_rng(0)).item() == \
            pytest.approx(lam * (2 - 1) ** 2, abs=1e-6)


def test_unit_norm_critic_has_zero_penalty():
    w = np.array([0.6, 0.8])

    def critic(x):
        return dm.sum(x * Tensor(w), axis=1)

    pen = gradient_penalty(critic, np.ones((3, 2)), np.zeros((3, 2)), 10.0, rng=np.random.default_rng(0))
    assert pen.item() == pytest.approx(0.0, abs=1e-9)


def test_interpolation_endpoints():
    rng = np.random.default_rng(3)
    real, fake = rng.normal(size=(3, 2, 4, 4)), rng.normal(size=(3, 2, 4, 4))
    assert np.array_equal(interpolate(real, fake, np.ones(3)), real)
    assert np.array_equal(interpolate(real, fake, np.zeros(3)), fake)
    mixed = interpolate(real, fake, np.array([1.0, 0.0, 0.5]))
    assert np.array_equal(mixed[0], real[0]) and np.array_equal(mixed[1], fake[1])
    assert np.allclose(mixed[2], (real[2] + fake[2]) / 2)


def test_penalty_nonnegative_and_shape_checks():
    critic = Critic(CriticSpec(n_layers=2, base_width=4), seed=0, dtype=np.float64)
    rng = np.random.default_rng(4)
    real, fake = rng.normal(size=(3, 3, 8, 8)), rng.normal(size=(3, 3, 8, 8))
    assert gradient_penalty(critic, real, fake, rng=rng).item() >= 0.0
    with pytest.raises(ValueError):
        gradient_penalty(critic, real, fake[:2])
    with pytest.raises(EmptyBatchError):
        gradient_penalty(critic, real[:0], fake[:0])


def test_penalty_weight_gradient_matches_finite_differences():
    critic = Critic(CriticSpec(n_layers=2, base_width=3), seed=5, dtype=np.float64)
    rng = np.random.default_rng(6)
    real, fake = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(2, 3, 8, 8))
    eps = np.array([0.3, 0.8])
    params = critic.parameters()
    pen = gradient_penalty(critic, real, fake, 10.0, eps=eps)
    analytic = dm.grad(pen, params)
    # finite differences over the first-layer weights and the head bias
    for k in (0, len(params) - 1):
        base = params[k].data.copy()

        def f(v):
            params[k].data = v
            out = gradient_penalty(critic, real, fake, 10.0, eps=eps).item()
            params[k].data = base
            return out

        fd = numeric_grad(f, base)
        assert rel_err(analytic[k].data, fd, floor=1e-6) <= 1e-4


def test_untrained_critic_on_identical_distributions_near_zero():
    spec = CriticSpec(n_layers=2, base_width=4)
    estimates = []
    for seed in range(100):
        rng = np.random.default_rng([seed, 77])
        critic = Critic(spec, seed=seed)
        real = rng.uniform(-1, 1, (8, 3, 16, 16)).astype(np.float32)
        fake = rng.uniform(-1, 1, (8, 3, 16, 16)).astype(np.float32)
        with dm.no_grad():
            s = GanBatchScores(critic(Tensor(real)), critic(Tensor(fake)))
        estimates.append(wasserstein_estimate(s).item())
    estimates = np.array(estimates)
    se = estimates.std(ddof=1) / np.sqrt(len(estimates))
    assert abs(estimates.mean()) <= 3 * se


def test_clip_weights_in_place():
    ps = [Tensor(np.array([-0.5, 0.005, 0.3])), Tensor(np.array([[0.02, -0.001]]))]
    clip_weights(ps, 0.01)
    assert np.array_equal(ps[0].data, [-0.01, 0.005, 0.01])
    assert np.array_equal(ps[1].data, [[0.01, -0.001]])
