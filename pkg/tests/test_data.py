import math

import numpy as np
import pytest

from memtrack.boxes import BBox
from memtrack.data import (
    AugmentParams,
    CropTransform,
    EmptyLabelMapWarning,
    SequenceSpec,
    crop_patch,
    load_sequence,
    make_label_map,
    make_training_sample,
    read_ppm,
    sample_training_frames,
    save_sequence,
    synth_sequence,
    write_ppm,
)
from memtrack.head import GridGeometry
from memtrack.tensor import InvalidArgumentError


def test_crop_side_and_scale():
    frame = np.zeros((3, 200, 200), np.float32)
    _, tf = crop_patch(frame, BBox.from_center(100, 100, 40, 40))
    assert tf.side == pytest.approx(160)
    assert tf.scale == pytest.approx(289 / 160)


def test_crop_center_pixel_matches_frame():
    rng = np.random.default_rng(0)
    frame = rng.random((3, 300, 300)).astype(np.float32)
    # (150.5, 120.5) is the center of frame pixel (row 120, col 150)
    patch, _ = crop_patch(frame, BBox.from_center(150.5, 120.5, 30, 50))
    np.testing.assert_allclose(patch[:, 144, 144], frame[:, 120, 150], rtol=1e-6)


def test_crop_at_corner_is_mean_filled():
    rng = np.random.default_rng(1)
    frame = rng.random((3, 100, 100)).astype(np.float32)
    box = BBox(0, 0, 20, 20)
    patch, tf = crop_patch(frame, box)
    means = frame.reshape(3, -1).mean(axis=1)
    np.testing.assert_allclose(patch[:, 0, 0], means, rtol=1e-6)
    inside = tf.box_to_patch(box)
    assert inside.intersects(289, 289)
    assert 0 < inside.x < 289 and 0 < inside.y < 289


def test_box_round_trip_through_crop():
    rng = np.random.default_rng(2)
    for _ in range(200):
        box = BBox(*rng.uniform(0, 300, 2), *rng.uniform(5, 80, 2))
        tf = CropTransform(*rng.uniform(0, 300, 2), rng.uniform(30, 400))
        back = tf.box_to_image(tf.box_to_patch(box))
        assert max(abs(a - b) for a, b in zip(back.as_tuple(), box.as_tuple())) < 0.51


def test_label_map_whole_patch():
    tf = CropTransform(50, 50, 40, out_size=32)
    m = make_label_map(BBox(30, 30, 40, 40), tf)
    assert m.shape == (1, 32, 32)
    assert m.all()


def test_label_map_left_half():
    tf = CropTransform(50, 50, 40, out_size=32)
    m = make_label_map(BBox(30, 30, 20, 40), tf)
    assert m.sum() == 32 * 16
    assert m[0, :, :16].all() and not m[0, :, 16:].any()


def test_label_map_pixel_count_matches_area():
    rng = np.random.default_rng(3)
    tf = CropTransform(0.0, 0.0, 289.0)  # scale 1: one patch pixel per image pixel
    for _ in range(100):
        x, y = rng.uniform(-100, 60, 2)
        w, h = rng.uniform(3, 60, 2)
        m = make_label_map(BBox(x, y, w, h), tf)
        # pixel centers in image coords are k + 0.5 - 144.5
        cols = np.arange(289) + 0.5 - 144.5
        expect = ((cols >= x) & (cols < x + w)).sum() * ((cols >= y) & (cols < y + h)).sum()
        assert m.sum() == expect
        assert abs(m.sum() - w * h) <= w + h + 1


def test_label_map_outside_patch_warns():
    tf = CropTransform(50, 50, 40, out_size=32)
    with pytest.warns(EmptyLabelMapWarning):
        m = make_label_map(BBox(500, 500, 10, 10), tf)
    assert not m.any()


def test_zero_area_box_rejected():
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 5)


def test_augmentation_keeps_target_in_patch():
    rng = np.random.default_rng(4)
    box = BBox(100, 100, 30, 12)
    lo = hi = 1.0
    for _ in range(10_000):
        aug = AugmentParams.sample(rng)
        assert abs(aug.shift_x) <= 0.2 and abs(aug.shift_y) <= 0.2
        lo, hi = min(lo, aug.scale), max(hi, aug.scale)
        side = 4 * math.sqrt(box.w * box.h) * aug.scale
        tf = CropTransform(box.cx + aug.shift_x * side, box.cy + aug.shift_y * side, side)
        p = tf.box_to_patch(box)
        assert p.x >= 0 and p.y >= 0 and p.x1 <= 289 and p.y1 <= 289
    assert 1 / 1.3 <= lo < 0.8 and 1.25 < hi <= 1.3


def test_training_frame_sampler():
    rng = np.random.default_rng(5)
    assert sample_training_frames(1, 3, rng=rng) == [0, 0, 0]
    for _ in range(10_000):
        idx = sample_training_frames(500, 3, 100, rng)
        assert len(idx) == 3 and idx == sorted(idx)
        assert idx[-1] - idx[0] <= 100
        assert 0 <= idx[0] and idx[-1] < 500
    for _ in range(100):
        assert set(sample_training_frames(2, 3, rng=rng)) <= {0, 1}
    with pytest.raises(InvalidArgumentError):
        sample_training_frames(10, 1)


def test_static_image_sample_gets_independent_augmentation():
    seq = synth_sequence(SequenceSpec(length=1, motion="static"), 0)
    grid = GridGeometry(8, 9, 72)
    s = make_training_sample(seq, np.random.default_rng(6), grid, T=3)
    assert len(s.memory_patches) == 2
    assert not np.array_equal(s.memory_patches[0], s.memory_patches[1])
    assert s.targets.num_positive > 0


def test_linear_motion_is_arithmetic():
    seq = synth_sequence(SequenceSpec(length=30, motion="linear", velocity=(1.5, -0.5), clutter=0), 3)
    c = np.array([[b.cx, b.cy] for b in seq.gt_boxes])
    np.testing.assert_allclose(np.diff(c, axis=0), np.tile([1.5, -0.5], (29, 1)), atol=1e-9)


def test_occlusion_is_logged_and_rendered():
    spec = SequenceSpec(length=80, motion="static", occluders=[(40, 60, 0.6)], target_size=(30, 30))
    seq = synth_sequence(spec, 1)
    occ = np.array([f["occlusion"] for f in seq.event_log["frames"]])
    assert np.all(occ[:40] == 0) and np.all(occ[60:] == 0)
    assert np.all(np.abs(occ[40:60] - 0.6) < 0.1)
    assert seq.event_log["events"][0] == {"type": "occlusion", "start": 40, "end": 60, "fraction": 0.6}
    # occluded frames differ from the unoccluded ones inside the box
    clean = synth_sequence(SequenceSpec(length=80, motion="static", target_size=(30, 30)), 1)
    b = seq.gt_boxes[50]
    sl = (slice(None), slice(int(b.y) + 1, int(b.y1) - 1), slice(int(b.x) + 1, int(b.x1) - 1))
    assert np.abs(seq.frames[50][sl] - clean.frames[50][sl]).mean() > 0.02


def test_synth_is_deterministic():
    spec = SequenceSpec(length=10, clutter=2, deformation=0.2, color_drift=0.5, occluders=[(3, 6, 0.5)])
    a = synth_sequence(spec, 9)
    b = synth_sequence(spec, 9)
    for x, y in zip(a.frames, b.frames):
        assert x.tobytes() == y.tobytes()
    assert a.gt_boxes == b.gt_boxes
    c = synth_sequence(spec, 10)
    assert not np.array_equal(a.frames[0], c.frames[0])


def test_target_too_large():
    with pytest.raises(InvalidArgumentError):
        synth_sequence(SequenceSpec(image_size=(64, 64), target_size=(70, 10)), 0)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    img = (np.round(rng.random((3, 5, 7)) * 255) / 255).astype(np.float32)
    write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_sequence_disk_round_trip(tmp_path):
    seq = synth_sequence(SequenceSpec(length=5, clutter=1), 2)
    save_sequence(seq, tmp_path / "s")
    back = load_sequence(tmp_path / "s")
    assert back.name == seq.name
    assert back.gt_boxes == seq.gt_boxes
    for x, y in zip(seq.frames, back.frames):
        np.testing.assert_array_equal(x, y)
    assert back.event_log["seed"] == 2


def test_followers_stay_close_to_the_target():
    spec = SequenceSpec(length=60, target_size=(18, 20), followers=2, clutter=1)
    seq = synth_sequence(spec, 4)
    side = math.sqrt(18 * 20)
    for box, rec in zip(seq.gt_boxes, seq.event_log["frames"]):
        assert len(rec["followers"]) == 2
        for x, y in rec["followers"]:
            # clipping at the border can only pull a follower closer
            assert math.hypot(x - box.cx, y - box.cy) <= 2.0 * side + 1e-9


def test_followers_leave_other_draws_unchanged():
    base = SequenceSpec(length=8, clutter=2)
    a = synth_sequence(base, 5)
    b = synth_sequence(SequenceSpec(length=8, clutter=2, followers=1), 5)
    assert a.gt_boxes == b.gt_boxes


def test_negative_distractor_count():
    with pytest.raises(InvalidArgumentError):
        synth_sequence(SequenceSpec(followers=-1), 0)
