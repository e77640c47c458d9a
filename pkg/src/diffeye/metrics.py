"""Evaluation metrics: 3D/2D gaze angle, semantic mIoU and projected eyeball-centre error."""
from __future__ import annotations

import math

import numpy as np

from .camera import CameraIntrinsics, project_points
from .errors import InvalidParameter, Undefined2DGaze
from .geometry import gaze_from_rotation, rotation_from_pitch_yaw
from .params import frame_block
from .synthdata import IRIS, PUPIL, Bitmask, rasterize_sequence

_UNIT_TOL = 1e-6


def _angle_deg(a, b):
    c = float(np.dot(a, b))
    return math.degrees(math.acos(min(max(c, -1.0), 1.0)))


def angular_error_3d(g, g_gt) -> float:
    g, g_gt = np.asarray(g, float), np.asarray(g_gt, float)
    for v in (g, g_gt):
        if abs(np.linalg.norm(v) - 1.0) > _UNIT_TOL:
            raise InvalidParameter(f"expected a unit vector, got norm {np.linalg.norm(v)}")
    return _angle_deg(g, g_gt)


def angular_error_2d(g, g_gt) -> float:
    """Angle between the image-plane components (x, y) of two gaze vectors."""
    a, b = np.asarray(g, float)[:2], np.asarray(g_gt, float)[:2]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise Undefined2DGaze("gaze has no image-plane component")
    # atan2 form: accurate for nearly parallel directions where acos loses digits
    cross = a[0] * b[1] - a[1] * b[0]
    return math.degrees(math.atan2(abs(cross), float(np.dot(a, b))))


def mean_iou(pred: Bitmask, gt: Bitmask) -> float:
    """Mean IoU over {pupil, iris}; classes absent from both masks are skipped."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise InvalidParameter("mask dimensions differ")
    ious = []
    for code in (PUPIL, IRIS):
        a, b = pred.data == code, gt.data == code
        union = np.count_nonzero(a | b)
        if union:
            ious.append(np.count_nonzero(a & b) / union)
    return float(np.mean(ious)) if ious else 1.0


def center_error_2d(pred, gt) -> float:
    return float(np.linalg.norm(np.asarray(pred, float) - np.asarray(gt, float)))


def gazes_of(x) -> np.ndarray:
    return np.array([gaze_from_rotation(rotation_from_pitch_yaw(p, y)) for p, y, _ in frame_block(np.asarray(x))])


def center_of(x, W, H) -> np.ndarray:
    x = np.asarray(x, float)
    return project_points(x[2:5][None, :], x[5], W, H)[0]


def evaluate(x, gt_masks=None, gt_gazes=None, gt_center=None, size=None) -> dict:
    """Summary and per-frame metrics of a fitted parameter vector.

    Any ground truth that is not supplied yields NaN for the matching metric.
    """
    x = np.asarray(x, float)
    if size is None:
        if not gt_masks:
            raise InvalidParameter("need masks or an explicit image size")
        size = (gt_masks[0].width, gt_masks[0].height)
    W, H = size
    gz = gazes_of(x)
    n = len(gz)
    g3 = np.full(n, np.nan)
    g2 = np.full(n, np.nan)
    iou = np.full(n, np.nan)
    if gt_gazes is not None:
        for k in range(n):
            g3[k] = angular_error_3d(gz[k] / np.linalg.norm(gz[k]), gt_gazes[k])
            try:
                g2[k] = angular_error_2d(gz[k], gt_gazes[k])
            except Undefined2DGaze:
                pass
    if gt_masks is not None:
        if len(gt_masks) != n:
            raise InvalidParameter("mask count does not match frame count")
        K = CameraIntrinsics(float(x[5]), W, H)
        for k, m in enumerate(rasterize_sequence(x, K)):
            iou[k] = mean_iou(m, gt_masks[k])
    cpx = center_error_2d(center_of(x, W, H), gt_center) if gt_center is not None else math.nan

    def _mean(a):
        a = a[~np.isnan(a)]
        return float(np.mean(a)) if a.size else math.nan

    return {
        "gaze3d_deg": _mean(g3), "gaze2d_deg": _mean(g2), "miou": _mean(iou), "center_px": cpx,
        "per_frame": [
            {"frame": k, "gaze3d_deg": float(g3[k]), "gaze2d_deg": float(g2[k]), "miou": float(iou[k])}
            for k in range(n)
        ],
    }
