import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffeye.camera import CameraIntrinsics, project
from diffeye.errors import InvalidConfig, InvalidParameter, Undefined2DGaze
from diffeye.geometry import FrameEyeParams, SharedEyeParams, eye_clouds
from diffeye.metrics import angular_error_2d, angular_error_3d, center_error_2d, evaluate, mean_iou
from diffeye.synthdata import (
    BACKGROUND, IRIS, PUPIL, Bitmask, SynthConfig, fill_polygon, generate_sequence, projected_rim, rasterize,
)

from oracles import point_in_polygon


# -- rasterizer -----------------------------------------------------------------------

@given(st.lists(st.tuples(st.floats(-3, 23), st.floats(-3, 23)), min_size=3, max_size=9))
@settings(max_examples=150)
def test_fill_matches_ray_casting(poly):
    # [DERIVED] per-pixel even-odd ray casting at pixel centres
    poly = np.array(poly)
    mask = fill_polygon(poly, 20, 20)
    for v in range(20):
        for u in range(20):
            x, y = u + 0.5, v + 0.5
            # skip centres lying within rounding distance of an edge
            P, Q = poly, np.roll(poly, -1, 0)
            d = Q - P
            t = np.clip(((x - P[:, 0]) * d[:, 0] + (y - P[:, 1]) * d[:, 1]) / np.maximum((d ** 2).sum(1), 1e-300), 0, 1)
            if np.min(np.hypot(P[:, 0] + t * d[:, 0] - x, P[:, 1] + t * d[:, 1] - y)) < 1e-9:
                continue
            assert mask[v, u] == point_in_polygon(x, y, poly), (u, v)


def test_fill_square():
    m = fill_polygon(np.array([[1, 1], [4, 1], [4, 3], [1, 3]], float), 6, 5)
    expect = np.zeros((5, 6), bool)
    expect[1:3, 1:4] = True
    np.testing.assert_array_equal(m, expect)


def test_frontal_pupil_area():
    # [DERIVED] projected circle at depth z_p = T_z - L_p has radius f r_p / z_p
    sh = SharedEyeParams(12.0, 6.0, [0, 0, 35.0], 400.0)
    fr = FrameEyeParams(0.0, 0.0, 2.5)
    K = CameraIntrinsics(400.0, 256, 256)
    m = rasterize(sh, fr, K)
    z_p = 35.0 - sh.L_p
    area = math.pi * (400.0 * 2.5 / z_p) ** 2
    assert abs(m.count(PUPIL) - area) / area < 0.02
    v, u = np.nonzero(m.data == PUPIL)
    assert np.mean(u + 0.5) == pytest.approx(128, abs=1e-9)
    assert np.mean(v + 0.5) == pytest.approx(128, abs=1e-9)


def test_rim_spacing():
    sh = SharedEyeParams(12.0, 6.0, [1, -1, 30.0], 300.0)
    fr = FrameEyeParams(0.3, -0.5, 2.0)
    uv = projected_rim(sh.r_i, sh, fr, CameraIntrinsics(300.0, 200, 200))
    assert np.linalg.norm(uv - np.roll(uv, -1, 0), axis=1).max() < 0.5


@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(1.5, 3.0), st.floats(-2, 2), st.floats(-2, 2),
       st.floats(30, 38), st.floats(100, 140))
@settings(max_examples=100)
def test_template_points_inside_pupil_region(p, y, r_p, tx, ty, tz, f):
    # every projected 72x8 pupil template point is within 1 px of a Pupil pixel
    sh = SharedEyeParams(12.0, 6.0, [tx, ty, tz], f)
    fr = FrameEyeParams(p, y, r_p)
    K = CameraIntrinsics(f, 128, 128)
    m = rasterize(sh, fr, K)
    pupil, _ = eye_clouds(sh, fr)
    uv = project(pupil, K).points
    vv, uu = np.nonzero(m.data == PUPIL)
    centres = np.stack([uu + 0.5, vv + 0.5], 1)
    # distance to the region: to the nearest pixel square, not its centre
    gap = np.maximum(np.abs(uv[:, None] - centres[None]) - 0.5, 0.0)
    d = np.min(np.hypot(gap[..., 0], gap[..., 1]), axis=1)
    assert d.max() <= 1.0


def test_classes_disjoint_and_codes(small_seq):
    for m in small_seq.masks:
        assert set(np.unique(m.data)) <= {BACKGROUND, IRIS, PUPIL}
        assert m.count(PUPIL) > 0 and m.count(IRIS) > 0


# -- generator ------------------------------------------------------------------------

def test_generator_deterministic():
    cfg = SynthConfig(n_frames=3, width=48, height=48, f_range=(40, 50), pixel_noise_sigma=0.5,
                      dropout_fraction=0.1, motion="smooth", seed=4)
    a, b = generate_sequence(cfg), generate_sequence(cfg)
    assert a.params.tobytes() == b.params.tobytes()
    assert all(x == y for x, y in zip(a.masks, b.masks))
    assert not all(x == y for x, y in zip(a.masks, generate_sequence(replace(cfg, seed=5)).masks))


def test_generator_noise_and_dropout_perturb():
    cfg = SynthConfig(n_frames=2, width=64, height=64, f_range=(55, 60), seed=2)
    clean = generate_sequence(cfg)
    noisy = generate_sequence(replace(cfg, pixel_noise_sigma=0.7))
    dropped = generate_sequence(replace(cfg, dropout_fraction=0.3))
    assert all(c == n for c, n in zip(clean.masks, noisy.clean_masks))
    assert any(c != n for c, n in zip(clean.masks, noisy.masks))
    fg = lambda m: m.count(PUPIL) + m.count(IRIS)
    assert fg(dropped.masks[0]) < 0.8 * fg(clean.masks[0])


def test_generator_labels_exact(small_seq):
    from diffeye.metrics import gazes_of
    np.testing.assert_allclose(small_seq.gazes, gazes_of(small_seq.params), atol=1e-15)
    assert len(small_seq.labels.centers) == len(small_seq.masks)


def test_frontal_frame_centroid():
    cfg = SynthConfig(n_frames=1, max_angle_deg=0.0, T_x_range=(0, 0), T_y_range=(0, 0), seed=8)
    seq = generate_sequence(cfg)
    v, u = np.nonzero(seq.masks[0].data == PUPIL)
    assert np.mean(u + 0.5) == pytest.approx(cfg.width / 2, abs=1e-9)
    assert np.mean(v + 0.5) == pytest.approx(cfg.height / 2, abs=1e-9)


def test_smooth_motion_steps():
    seq = generate_sequence(SynthConfig(n_frames=20, motion="smooth", max_step_deg=3.0, seed=1))
    fb = seq.params[6:].reshape(-1, 3)
    assert np.abs(np.diff(fb[:, :2], axis=0)).max() <= math.radians(3.0) + 1e-12


@pytest.mark.parametrize("kw", [
    dict(r_i_range=(11.0, 12.5)), dict(r_p_range=(5.0, 6.0)), dict(dropout_fraction=1.0),
    dict(motion="teleport"), dict(n_frames=0), dict(f_range=(10, 5)),
])
def test_invalid_configs(kw):
    with pytest.raises(InvalidConfig):
        generate_sequence(SynthConfig(**kw))


def test_config_dict_round_trip():
    cfg = SynthConfig(n_frames=7, motion="smooth", seed=3)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidConfig):
        SynthConfig.from_dict({"n_frames": 2, "bogus": 1})


# -- metrics --------------------------------------------------------------------------

def test_angular_error_3d():
    g = np.array([0, 0, -1.0])
    assert angular_error_3d(g, g) == 0.0
    assert angular_error_3d([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0)
    t = math.radians(10)
    assert angular_error_3d(g, [math.sin(t), 0, -math.cos(t)]) == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(InvalidParameter):
        angular_error_3d([0, 0, 2.0], g)


def test_angular_error_2d():
    assert angular_error_2d([0.6, 0, -0.8], [0.6, 0, -0.8]) == 0.0
    assert angular_error_2d([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0)
    with pytest.raises(Undefined2DGaze):
        angular_error_2d([0, 0, -1.0], [0.6, 0, -0.8])


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-5, 5), st.floats(-5, 5))
def test_angular_error_2d_ignores_z(ax, ay, bx, by, za, zb):
    if math.hypot(ax, ay) < 1e-3 or math.hypot(bx, by) < 1e-3:
        return
    e = angular_error_2d([ax, ay, za], [bx, by, zb])
    assert 0 <= e <= 180
    assert e == angular_error_2d([ax, ay, 0.0], [bx, by, 1.0])


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_angular_error_3d_bounds(a, b):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    e = angular_error_3d(a / np.linalg.norm(a), b / np.linalg.norm(b))
    assert 0.0 <= e <= 180.0


def _mask(fill):
    d = np.zeros((10, 10), np.uint8)
    fill(d)
    return Bitmask(10, 10, d)


def test_mean_iou_examples():
    a = _mask(lambda d: d.__setitem__((slice(0, 4), slice(0, 4)), PUPIL))
    b = _mask(lambda d: d.__setitem__((slice(6, 10), slice(6, 10)), PUPIL))
    assert mean_iou(a, a) == 1.0
    assert mean_iou(a, b) == 0.0
    half = _mask(lambda d: d.__setitem__((slice(0, 2), slice(0, 4)), PUPIL))
    assert mean_iou(half, a) == 0.5  # iris empty in both -> skipped
    with pytest.raises(InvalidParameter):
        mean_iou(a, Bitmask(5, 5, np.zeros((5, 5))))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30)
def test_mean_iou_bounds(seed):
    r = np.random.default_rng(seed)
    codes = np.array([BACKGROUND, IRIS, PUPIL], np.uint8)
    a = Bitmask(8, 8, codes[r.integers(0, 3, (8, 8))])
    b = Bitmask(8, 8, codes[r.integers(0, 3, (8, 8))])
    assert 0.0 <= mean_iou(a, b) <= 1.0
    assert mean_iou(a, b) == mean_iou(b, a)


def test_center_error():
    assert center_error_2d([1, 1], [1, 1]) == 0.0
    assert center_error_2d([0, 0], [3, 4]) == 5.0
    assert center_error_2d([3, 4], [0, 0]) == 5.0


def test_evaluate_ground_truth_self(small_seq):
    m = evaluate(small_seq.params, small_seq.clean_masks, small_seq.gazes, small_seq.center)
    assert m["gaze3d_deg"] == 0.0 and m["center_px"] == 0.0 and m["miou"] == 1.0
    assert len(m["per_frame"]) == len(small_seq.masks)
    partial = evaluate(small_seq.params, None, None, None, size=(64, 64))
    assert all(math.isnan(partial[k]) for k in ("gaze3d_deg", "gaze2d_deg", "miou", "center_px"))
