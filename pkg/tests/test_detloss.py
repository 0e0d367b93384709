import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxgan.boxgeom import BBox
from boxgan.detloss import (DetectionGrid, GridError, LossWeights, NoObjectError, box_loss, classification_loss,
                            confidence_loss, decode_batch, decode_single, encode_batch, encode_target,
                            responsible_cell, total_detection_loss)
from boxgan.diffmath import Tensor, grad
from boxgan.diffmath import sum as tsum
from oracles import numeric_grad, rel_err

GT = BBox(0.25, 0.25, 0.75, 0.75)


def hand_grid():
    """S=2, B=1, C=3 prediction for GT: object cell (1,1) conf 0.6, others 0.2,
    class scores (0.2, 0.5, 0.3), and a concentric square box with IoU exactly 1/2."""
    pred = np.zeros((2, 2, 8))
    pred[..., 4] = 0.2
    side = 0.5 / math.sqrt(2)
    pred[1, 1, :5] = (0.0, 0.0, side, side, 0.6)
    pred[1, 1, 5:] = (0.2, 0.5, 0.3)
    return DetectionGrid(pred)


def target_grid():
    return encode_target([(GT, 1)], S=2)


# -- encoding -------------------------------------------------------------------------

def test_responsible_cell_examples():
    assert (responsible_cell(0.2, 2), responsible_cell(0.7, 2)) == (0, 1)
    assert responsible_cell(0.5, 2) == 1
    assert responsible_cell(1.0, 2) == 1


def test_encode_places_label_in_center_cell():
    box = BBox(0.6, 0.1, 0.8, 0.3)  # center (0.7, 0.2)
    g = encode_target([(box, 2)], S=2).values
    assert g[0, 1, 4] == 1.0 and g[..., 4].sum() == 1.0
    assert np.allclose(g[0, 1, :4], (0.4, 0.4, 0.2, 0.2))
    assert list(g[0, 1, 5:]) == [0, 0, 1]


def test_encode_empty_and_errors():
    assert not encode_target([], S=4).values.any()
    with pytest.raises(GridError):
        encode_target([(GT, 3)], S=2)
    with pytest.raises(GridError):
        encode_target([(GT, 0), (BBox(0.3, 0.3, 0.7, 0.7), 1)], S=2)


# -- confidence (grid objectness) ---------------------------------------------------

def test_confidence_examples():
    t = target_grid()
    assert confidence_loss(t, t).item() == 0.0
    assert confidence_loss(hand_grid(), t, 0.5).item() == pytest.approx(0.22, abs=1e-15)
    perfect_obj = hand_grid().values.copy()
    perfect_obj[1, 1, 4] = 1.0
    assert confidence_loss(DetectionGrid(perfect_obj), t, 0.0).item() == 0.0


def test_confidence_affine_in_lambda():
    rng = np.random.default_rng(0)
    pred = DetectionGrid(rng.uniform(0, 1, (4, 4, 8)))
    t = encode_target([(GT, 0)], S=4)
    l0 = confidence_loss(pred, t, 0.0).item()
    l1 = confidence_loss(pred, t, 1.0).item()
    for lam in (0.25, 0.5, 2.0):
        assert confidence_loss(pred, t, lam).item() == pytest.approx(l0 + lam * (l1 - l0), abs=1e-12)


# -- classification ------------------------------------------------------------------

def test_classification_examples():
    t = target_grid()
    assert classification_loss(hand_grid(), t).item() == pytest.approx(0.38, abs=1e-15)
    assert classification_loss(t, t).item() == 0.0
    empty = encode_target([], S=2)
    assert classification_loss(hand_grid(), empty).item() == 0.0


# -- combined loss ---------------------------------------------------------------------

def test_total_loss_hand_example():
    parts = total_detection_loss(hand_grid(), target_grid(), LossWeights(1, 1, 1, 0.5))
    assert parts.ciou.item() == pytest.approx(0.5, abs=1e-12)
    assert parts.conf.item() == pytest.approx(0.22, abs=1e-15)
    assert parts.clf.item() == pytest.approx(0.38, abs=1e-15)
    assert parts.total.item() == pytest.approx(1.10, abs=1e-12)


def test_total_loss_weights_are_linear():
    parts = total_detection_loss(hand_grid(), target_grid(), LossWeights(2.0, 3.0, 0.5, 0.5))
    assert parts.total.item() == pytest.approx(2 * 0.5 + 3 * 0.22 + 0.5 * 0.38, abs=1e-12)


def test_total_loss_perfect_prediction_is_zero():
    t = target_grid()
    assert total_detection_loss(t, t).total.item() == 0.0


def test_alpha_zero_ignores_box_geometry():
    w = LossWeights(alpha=0.0)
    moved = hand_grid().values.copy()
    moved[1, 1, :4] = (0.9, 0.1, 0.3, 0.7)
    a = total_detection_loss(hand_grid(), target_grid(), w).total.item()
    b = total_detection_loss(DetectionGrid(moved), target_grid(), w).total.item()
    assert a == b


def test_no_object_and_shape_errors():
    with pytest.raises(NoObjectError):
        total_detection_loss(hand_grid(), encode_target([], S=2))
    with pytest.raises(GridError):
        confidence_loss(hand_grid(), encode_target([(GT, 0)], S=4))
    with pytest.raises(GridError):
        DetectionGrid(np.zeros((2, 3, 8)))
    with pytest.raises(ValueError):
        LossWeights(alpha=-1.0)


def test_batched_losses_match_per_sample():
    rng = np.random.default_rng(1)
    labels = [(BBox(0.1, 0.2, 0.5, 0.6), 0), (BBox(0.4, 0.4, 0.9, 0.7), 2), (GT, 1)]
    targets = encode_batch(labels, S=4)
    preds = rng.uniform(0.05, 0.95, targets.shape)
    batch = total_detection_loss(DetectionGrid(preds), DetectionGrid(targets))
    assert batch.total.shape == (3,)
    for i in range(3):
        single = total_detection_loss(DetectionGrid(preds[i]), DetectionGrid(targets[i]))
        assert batch.total.data[i] == pytest.approx(single.total.item(), abs=1e-12)


# -- decoding --------------------------------------------------------------------------

def test_decode_examples():
    det = decode_single(encode_target([(GT, 2)], S=4))
    assert det.box == GT and det.class_id == 2 and det.confidence == 1.0
    assert decode_single(DetectionGrid(np.zeros((2, 2, 8))), 0.5) is None
    g = np.zeros((2, 2, 8))
    g[0, 0, :5] = (0.5, 0.5, 0.2, 0.2, 0.8)
    g[1, 1, :5] = (0.5, 0.5, 0.4, 0.4, 0.9)
    g[1, 1, 5:] = (0.1, 0.1, 0.8)
    det = decode_single(DetectionGrid(g))
    assert det.confidence == 0.9 and det.class_id == 2
    assert det.box.as_tuple() == pytest.approx((0.55, 0.55, 0.95, 0.95))


def test_decode_picks_best_of_two_slots():
    g = np.zeros((2, 2, 13))
    g[0, 1, 0:5] = (0.5, 0.5, 0.2, 0.2, 0.8)
    g[0, 1, 5:10] = (0.5, 0.5, 0.4, 0.2, 0.9)
    det = decode_single(DetectionGrid(g, B=2))
    assert det.confidence == 0.9
    assert det.box.as_tuple() == pytest.approx((0.55, 0.15, 0.95, 0.35))


def test_decode_batch_clamps_to_unit_square():
    g = np.zeros((1, 2, 2, 8))
    g[0, 0, 0, :5] = (0.1, 0.1, 0.6, 0.6, 1.0)
    (det,) = decode_batch(g)
    assert det.box.as_tuple() == pytest.approx((0.0, 0.0, 0.35, 0.35))


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.floats(0.02, 1.0), st.floats(0.02, 1.0),
       st.integers(1, 8), st.integers(1, 3), st.integers(1, 5), st.data())
def test_encode_decode_round_trip(x1, y1, fw, fh, S, B, C, data):
    box = BBox(x1, y1, x1 + fw * (1 - x1), y1 + fh * (1 - y1))
    cls = data.draw(st.integers(0, C - 1))
    det = decode_single(encode_target([(box, cls)], S, B, C), 0.0)
    assert det.class_id == cls
    assert max(abs(p - q) for p, q in zip(det.box.as_tuple(), box.as_tuple())) <= 1e-6


# -- properties -----------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_losses_nonnegative_and_order_invariant(seed):
    rng = np.random.default_rng(seed)
    S = 3
    t = encode_target([(GT, int(rng.integers(3)))], S=S)
    pred = rng.uniform(0.05, 0.95, t.values.shape)
    perm = rng.permutation(S * S)

    def shuffle(v):
        return v.reshape(S * S, -1)[perm].reshape(v.shape)

    for f in (confidence_loss, classification_loss):
        a = f(DetectionGrid(pred), t).item()
        b = f(DetectionGrid(shuffle(pred)), DetectionGrid(shuffle(t.values))).item()
        assert a >= 0 and a == pytest.approx(b, abs=1e-12)
    assert box_loss(DetectionGrid(pred), t).item() >= 0


# -- gradients vs finite differences ----------------------------------------------------

@pytest.mark.parametrize("which", ["conf", "clf", "ciou", "total"])
def test_gradients_match_finite_differences(which):
    rng = np.random.default_rng({"conf": 0, "clf": 1, "ciou": 2, "total": 3}[which])
    labels = [(BBox(0.1, 0.2, 0.5, 0.6), 0), (BBox(0.3, 0.35, 0.9, 0.7), 2)]
    target = DetectionGrid(encode_batch(labels, S=3))
    pred0 = rng.uniform(0.1, 0.9, target.values.shape)
    w = LossWeights(0.7, 1.3, 0.9, 0.5)

    def loss(p):
        parts = total_detection_loss(DetectionGrid(p), target, w)
        return tsum(getattr(parts, which))

    p = Tensor(pred0, requires_grad=True)
    (g,) = grad(loss(p), [p])
    fd = numeric_grad(lambda a: loss(Tensor(a)).item(), pred0)
    assert rel_err(g.data, fd, floor=1e-6) <= 1e-4
