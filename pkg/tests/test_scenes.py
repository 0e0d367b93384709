import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from boxgan.boxgeom import BBox
from boxgan.scenes import (CLASS_NAMES, DatasetError, LabeledImage, PlacementError, SceneConfig, _background,
                           _place, format_label, generate_dataset, generate_scene, load_dataset, load_external,
                           parse_labels, resize_bilinear, sample_label, stack_images, write_dataset)

QUANT = 1 / 255 + 1e-6  # uint8 quantization step plus float32 rounding


def test_generation_is_deterministic():
    a = generate_dataset(SceneConfig(), 5, seed=11)
    b = generate_dataset(SceneConfig(), 5, seed=11)
    for x, y in zip(a, b):
        assert x.pixels.tobytes() == y.pixels.tobytes() and x.labels == y.labels
    c = generate_dataset(SceneConfig(), 5, seed=12)
    assert any(x.labels != y.labels for x, y in zip(a, c))


def test_scene_contract():
    item = generate_scene(SceneConfig(), np.random.default_rng(0))
    assert item.pixels.shape == (3, 64, 64) and item.pixels.dtype == np.float32
    assert item.pixels.min() >= -1 and item.pixels.max() <= 1
    assert len(item.labels) == 1 and 0 <= item.class_id < 3
    assert len(CLASS_NAMES) == 3


@pytest.mark.parametrize("complexity", [0.0, 0.5])
def test_shape_pixels_inside_box_and_box_is_tight(complexity):
    config = SceneConfig(complexity=complexity)
    side = config.image_side
    for i in range(200):
        item = generate_scene(config, np.random.default_rng([3, i]))
        # rebuild the background from the same stream to find pixels that differ from it
        rng = np.random.default_rng([3, i])
        _place(config, rng)
        bg = _background(config, rng).astype(np.float32)
        changed = np.argwhere((item.pixels != bg).any(axis=0))
        b = item.box
        c1, r1, c2, r2 = (int(round(v * side)) for v in b.as_tuple())
        assert changed.size > 0
        assert changed[:, 0].min() >= r1 and changed[:, 0].max() < r2
        assert changed[:, 1].min() >= c1 and changed[:, 1].max() < c2
        # tightness: every edge row/column of the box holds a shape pixel
        m = item.shape_mask
        assert m[r1].any() and m[r2 - 1].any() and m[:, c1].any() and m[:, c2 - 1].any()
        assert not m[:r1].any() and not m[r2:].any() and not m[:, :c1].any() and not m[:, c2:].any()


def test_sample_label_matches_rendered_scene():
    config = SceneConfig()
    for i in range(20):
        item = generate_scene(config, np.random.default_rng([5, i]))
        assert sample_label(config, np.random.default_rng([5, i])) == item.labels[0]


def test_class_histogram_uniform_within_three_sigma():
    config = SceneConfig()
    n = 10_000
    counts = np.bincount([sample_label(config, np.random.default_rng([0, i]))[1] for i in range(n)], minlength=3)
    p = 1 / 3
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma), counts


def test_placement_error_for_impossible_sizes():
    with pytest.raises(PlacementError):
        generate_scene(SceneConfig(image_side=8, size_range=(0.1, 0.2)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        SceneConfig(size_range=(0.6, 0.2))


def test_round_trip_through_disk(tmp_path):
    data = generate_dataset(SceneConfig(complexity=0.3), 12, seed=2)
    write_dataset(data, tmp_path)
    back = load_dataset(tmp_path)
    assert len(back) == 12
    for a, b in zip(data, back):
        assert a.labels == b.labels
        assert np.abs(a.pixels - b.pixels).max() <= QUANT


def test_label_text_round_trip_is_exact_for_pixel_aligned_boxes():
    box = BBox(3 / 64, 10 / 64, 41 / 64, 64 / 64)
    assert parse_labels(format_label(box, 2) + "\n", "x") == [(box, 2)]


@pytest.mark.parametrize("line", ["0 0.1 0.1 0.5", "a 0.1 0.1 0.5 0.5", "1 0.5 0.1 0.2 0.6", "-1 0 0 1 1"])
def test_malformed_label_names_file_and_line(tmp_path, line):
    write_dataset(generate_dataset(SceneConfig(), 2, seed=0), tmp_path)
    (tmp_path / "labels" / "000001.txt").write_text("0 0.1 0.1 0.5 0.5\n" + line + "\n")
    with pytest.raises(DatasetError, match=r"000001\.txt line 2"):
        load_dataset(tmp_path)


def test_empty_directory_is_empty_dataset(tmp_path):
    assert load_dataset(tmp_path) == []
    (tmp_path / "images").mkdir()
    (tmp_path / "labels").mkdir()
    assert load_dataset(tmp_path) == []
    with pytest.raises(DatasetError):
        stack_images([])


def test_name_mismatch_and_corrupt_image(tmp_path):
    write_dataset(generate_dataset(SceneConfig(), 2, seed=0), tmp_path)
    (tmp_path / "labels" / "000001.txt").rename(tmp_path / "labels" / "000009.txt")
    with pytest.raises(DatasetError, match="without labels"):
        load_dataset(tmp_path)
    (tmp_path / "labels" / "000009.txt").rename(tmp_path / "labels" / "000001.txt")
    (tmp_path / "images" / "000001.png").write_bytes(b"not a png")
    with pytest.raises(DatasetError, match="unreadable"):
        load_dataset(tmp_path)


def _external(tmp_path, array, box=(0.25, 0.25, 0.75, 0.75)):
    (tmp_path / "images").mkdir()
    (tmp_path / "labels").mkdir()
    Image.fromarray(array).save(tmp_path / "images" / "a.png")
    (tmp_path / "labels" / "a.txt").write_text(f"1 {box[0]} {box[1]} {box[2]} {box[3]}\n")


def test_external_resize_keeps_box(tmp_path):
    rng = np.random.default_rng(0)
    _external(tmp_path, rng.integers(0, 256, (256, 256, 3), dtype=np.uint8))
    (item,) = load_external(tmp_path, 64)
    assert item.pixels.shape == (3, 64, 64)
    assert item.labels == [(BBox(0.25, 0.25, 0.75, 0.75), 1)]


def test_external_constant_image_stays_constant(tmp_path):
    _external(tmp_path, np.full((256, 200, 3), (10, 128, 250), dtype=np.uint8))
    (item,) = load_external(tmp_path, 64)
    for ch, v in enumerate((10, 128, 250)):
        assert np.all(item.pixels[ch] == np.float32(v / 127.5 - 1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 40), st.integers(1, 40),
       st.floats(-100, 300))
def test_resize_exact_on_constants(h, w, oh, ow, value):
    img = np.full((h, w, 2), value)
    assert np.all(resize_bilinear(img, oh, ow) == value)


def test_resize_identity_at_same_size():
    img = np.random.default_rng(1).uniform(0, 255, (9, 7, 3))
    assert np.allclose(resize_bilinear(img, 9, 7), img, atol=1e-12)


def test_labeled_image_accessors():
    item = LabeledImage(np.zeros((3, 4, 4), np.float32), [(BBox(0, 0, 0.5, 0.5), 2)])
    assert item.box == BBox(0, 0, 0.5, 0.5) and item.class_id == 2
