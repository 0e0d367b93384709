import numpy as np
import pytest

from boxgan import diffmath as dm
from boxgan.boxgeom import BBox, rasterize_batch
from boxgan.detloss import DetectionGrid, encode_batch, total_detection_loss
from boxgan.diffmath import Tensor
from boxgan.netzoo import (Critic, CriticSpec, Detector, DetectorSpec, Generator, GeneratorSpec, criticize,
                           detect_forward, generate, spec_dict)


def _noise(n, spec=GeneratorSpec(), seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((n, spec.noise_channels, spec.image_side,
                                                               spec.image_side)).astype(np.float32))


def _conv_params(cin, cout, k):
    return cin * cout * k * k + cout


# -- generator ---------------------------------------------------------------------

def test_generator_shape_and_range():
    g = Generator(GeneratorSpec(), seed=0)
    masks = rasterize_batch([BBox(0.1, 0.1, 0.5, 0.6), BBox(0.3, 0.2, 0.9, 0.9)], 64)
    with dm.no_grad():
        out = generate(g, _noise(2), masks)
    assert out.shape == (2, 3, 64, 64)
    assert out.data.min() >= -1.0 and out.data.max() <= 1.0


def test_generator_is_deterministic():
    spec = GeneratorSpec(image_side=32, base_width=8, depth=3)
    masks = rasterize_batch([BBox(0.1, 0.1, 0.5, 0.6)], 32)
    a = Generator(spec, seed=3).generate(_noise(1, spec), masks).data
    b = Generator(spec, seed=3).generate(_noise(1, spec), masks).data
    assert a.tobytes() == b.tobytes()
    c = Generator(spec, seed=4).generate(_noise(1, spec), masks).data
    assert not np.array_equal(a, c)


def test_mask_gradient_is_nonzero():
    spec = GeneratorSpec(image_side=32, base_width=8, depth=3)
    g = Generator(spec, seed=1, dtype=np.float64)
    masks = Tensor(rasterize_batch([BBox(0.25, 0.25, 0.75, 0.75)], 32, np.float64), requires_grad=True)
    noise = Tensor(_noise(1, spec).data.astype(np.float64))
    (gm,) = dm.grad(dm.sum(g.generate(noise, masks)), [masks])
    assert np.abs(gm.data).max() > 0


def test_zero_condition_is_unconditional_mode():
    spec = GeneratorSpec(image_side=32, base_width=8, depth=3)
    g = Generator(spec, seed=2)
    # an all-zero mask still passes through the encoder biases, which start at zero
    a = g.generate(_noise(2, spec), None).data
    b = g.generate(_noise(2, spec), np.zeros((2, 1, 32, 32), np.float32)).data
    assert np.array_equal(a, b)


def test_generator_input_validation():
    spec = GeneratorSpec(image_side=32, base_width=8, depth=3)
    g = Generator(spec)
    with pytest.raises(ValueError):
        g.generate(_noise(1))  # 64x64 noise for a 32x32 generator
    with pytest.raises(ValueError):
        g.generate(_noise(2, spec), np.zeros((1, 1, 32, 32), np.float32))
    with pytest.raises(ValueError):
        GeneratorSpec(image_side=60, depth=4)


def test_generator_parameter_count_regression():
    m, z = 4, 4
    expected = (_conv_params(1, m, 3) + _conv_params(m, m, 3)
                + _conv_params(z + m, 32, 4) + _conv_params(32, 64, 4) + _conv_params(64, 128, 4)
                + _conv_params(128, 256, 4)
                + _conv_params(256, 128, 4) + _conv_params(256, 64, 4) + _conv_params(128, 32, 4)
                + _conv_params(64, 3, 4))
    assert expected == 1548159
    assert Generator(GeneratorSpec()).parameter_count() == expected
    assert Generator(GeneratorSpec(base_width=16)).parameter_count() == 389151


# -- critic ------------------------------------------------------------------------

def test_critic_patch_map_at_256_is_32x32():
    spec = CriticSpec(n_layers=3, base_width=2)
    critic = Critic(spec)
    with dm.no_grad():
        smap, per_sample = criticize(critic, Tensor(np.zeros((1, 3, 256, 256), np.float32)))
    assert smap.shape == (1, 1, 32, 32)
    assert per_sample.shape == (1,)
    assert spec.score_side(256) == 32


def test_critic_patch_map_at_64_is_8x8():
    critic = Critic(CriticSpec())
    smap, per_sample = critic.criticize(Tensor(np.random.default_rng(0).uniform(-1, 1, (2, 3, 64, 64))
                                               .astype(np.float32)))
    assert smap.shape == (2, 1, 8, 8)
    assert np.allclose(per_sample.data, smap.data.mean(axis=(1, 2, 3)))


def test_critic_scores_are_unbounded():
    critic = Critic(CriticSpec(n_layers=2, base_width=4), seed=0)
    x = np.random.default_rng(1).uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32)
    s1 = critic(Tensor(x)).item()
    s100 = critic(Tensor(100 * x)).item()
    # positively homogeneous stack (zero biases): scores scale with the input
    assert s100 == pytest.approx(100 * s1, rel=1e-4)


def test_constant_weight_critic_on_2x2_case():
    critic = Critic(CriticSpec(n_layers=1, base_width=2), dtype=np.float64)
    critic.layers[0].weight.data[:] = 0.5
    critic.layers[1].weight.data[:] = 0.25
    a = np.array([[[1.0, 2.0], [3.0, 4.0]]] * 3)[None]  # sum 30, mean 2.5
    b = np.full((1, 3, 2, 2), 2.5)
    sa, sb = critic(Tensor(a)).item(), critic(Tensor(b)).item()
    # hand value: every pixel meets one kernel tap, 2 channels * 0.25 * 0.5 * 30
    assert sa == sb == pytest.approx(2 * 0.25 * 0.5 * 30)


def test_critic_parameter_count_regression():
    expected = _conv_params(3, 32, 4) + _conv_params(32, 64, 4) + _conv_params(64, 128, 4) + _conv_params(128, 1, 1)
    assert Critic(CriticSpec()).parameter_count() == expected == 165729
    assert Critic(CriticSpec(base_width=16)).parameter_count() == 41905


def test_critic_rejects_indivisible_side():
    with pytest.raises(ValueError):
        Critic(CriticSpec(n_layers=3))(Tensor(np.zeros((1, 3, 20, 20), np.float32)))


# -- detector ------------------------------------------------------------------------

def test_detector_grid_shape_and_activations():
    det = Detector(DetectorSpec())
    with dm.no_grad():
        out = detect_forward(det, Tensor(np.random.default_rng(0).uniform(-1, 1, (2, 3, 64, 64))
                                         .astype(np.float32)))
    assert out.shape == (2, 4, 4, 8)
    assert (out.data[..., :5] > 0).all() and (out.data[..., :5] < 1).all()
    assert np.allclose(out.data[..., 5:].sum(axis=-1), 1.0, atol=1e-6)


def test_detection_loss_reaches_pixels():
    det = Detector(DetectorSpec(), seed=1, dtype=np.float64)
    x = Tensor(np.random.default_rng(2).uniform(-1, 1, (2, 3, 64, 64)), requires_grad=True)
    target = encode_batch([(BBox(0.1, 0.1, 0.4, 0.5), 0), (BBox(0.5, 0.2, 0.9, 0.8), 2)], S=4)
    loss = dm.sum(total_detection_loss(DetectionGrid(det(x)), DetectionGrid(target)).total)
    (gx,) = dm.grad(loss, [x])
    assert np.abs(gx.data).max() > 0


def test_frozen_detector_buffers_unchanged():
    det = Detector(DetectorSpec(), seed=3).freeze()
    before = {k: v.copy() for k, v in det.state_dict().items()}
    x = Tensor(np.random.default_rng(4).uniform(-1, 1, (1, 3, 64, 64)).astype(np.float32), requires_grad=True)
    dm.backward(dm.sum(det(x)))
    assert all(p.grad is None and not p.requires_grad for p in det.parameters())
    after = det.state_dict()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)
    assert x.grad is not None


def test_detector_parameter_count_regression():
    expected = (_conv_params(3, 16, 4) + _conv_params(16, 32, 4) + _conv_params(32, 64, 4)
                + _conv_params(64, 128, 4) + _conv_params(128, 8, 1))
    assert Detector(DetectorSpec()).parameter_count() == expected == 174072


# -- state handling ---------------------------------------------------------------------

def test_state_dict_round_trip_and_names():
    g = Generator(GeneratorSpec(image_side=32, base_width=4, depth=3), seed=0)
    names = [n for n, _ in g.named_parameters()]
    assert names[0] == "generator/0/weight" and names[1] == "generator/0/bias"
    h = Generator(GeneratorSpec(image_side=32, base_width=4, depth=3), seed=9)
    h.load_state_dict(g.state_dict())
    assert all(np.array_equal(a.data, b.data) for a, b in zip(g.parameters(), h.parameters()))
    bad = dict(g.state_dict())
    bad.pop("generator/0/bias")
    with pytest.raises(KeyError):
        h.load_state_dict(bad)


def test_spec_dict():
    assert spec_dict(CriticSpec()) == {"n_layers": 3, "base_width": 32, "leaky_slope": 0.2}
