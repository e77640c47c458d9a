"""Point-set segmentation losses, gaze loss, eyeball-centre loss and their weighted sum.

All pixel-space terms are mean Euclidean distances in pixels. Each directional
segmentation term is normalised by the size of its own source set and then
averaged over frames. Nearest-neighbour assignments are treated as constants
when differentiating (see :mod:`diffeye.diffengine`).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .camera import PixelCloud, project_points
from .errors import EmptyObservation, InvalidParameter, LabelsAbsent
from .geometry import (
    DEFAULT_N_RHO, DEFAULT_N_THETA, canonical_iris_cloud, canonical_pupil_cloud, deform,
    gaze_from_rotation, rotation_from_pitch_yaw,
)
from .neighbors import KDIndex, distances_to, nearest
from .params import check_constraints, frame_block, n_frames_of


@dataclass(eq=False)
class SemanticObservation:
    """Ground-truth pupil and iris pixel centres of one frame.

    Pixel (u, v) of a mask is represented by the continuous point (u + 0.5, v + 0.5).
    The iris set excludes pupil pixels.
    """

    pupil_pixels: np.ndarray
    iris_pixels: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.pupil_pixels = np.asarray(self.pupil_pixels, dtype=float).reshape(-1, 2)
        self.iris_pixels = np.asarray(self.iris_pixels, dtype=float).reshape(-1, 2)

    @classmethod
    def from_mask(cls, mask) -> "SemanticObservation":
        from .synthdata import IRIS, PUPIL
        data = mask.data
        vp, up = np.nonzero(data == PUPIL)
        vi, ui = np.nonzero(data == IRIS)
        return cls(np.stack([up + 0.5, vp + 0.5], 1), np.stack([ui + 0.5, vi + 0.5], 1),
                   mask.width, mask.height)

    @cached_property
    def pupil_index(self) -> KDIndex:
        return KDIndex(self.pupil_pixels)

    @cached_property
    def iris_index(self) -> KDIndex:
        return KDIndex(self.iris_pixels)

    def pixels(self, semantic: str) -> np.ndarray:
        return self.pupil_pixels if semantic == "pupil" else self.iris_pixels

    def index(self, semantic: str) -> KDIndex:
        return self.pupil_index if semantic == "pupil" else self.iris_index


@dataclass(frozen=True)
class LossWeights:
    w_pred2gt: float = 1.0
    w_gt2pred: float = 1.0
    w_gaze: float = 0.0
    w_center: float = 0.0
    # Squared-norm variant of the gaze term; off by default.
    gaze_squared: bool = False

    def __post_init__(self):
        for k in ("w_pred2gt", "w_gt2pred", "w_gaze", "w_center"):
            if not getattr(self, k) >= 0:
                raise InvalidParameter(f"loss weight {k} must be nonnegative, got {getattr(self, k)}")

    def as_tuple(self):
        return (self.w_pred2gt, self.w_gt2pred, self.w_gaze, self.w_center)


@dataclass(frozen=True)
class GazeLabel:
    g: np.ndarray
    frame_index: int

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float).reshape(3)
        object.__setattr__(self, "g", g)
        if abs(np.linalg.norm(g) - 1.0) > 1e-9:
            raise InvalidParameter(f"gaze label for frame {self.frame_index} is not unit norm")


@dataclass(frozen=True)
class CenterLabel:
    c: np.ndarray
    frame_index: int

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(2))


@dataclass(frozen=True)
class Labels:
    gaze: tuple = ()
    centers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gaze", tuple(self.gaze))
        object.__setattr__(self, "centers", tuple(self.centers))

    def subset(self, frames) -> "Labels":
        keep = set(frames)
        return Labels(tuple(l for l in self.gaze if l.frame_index in keep), self.centers)


NO_LABELS = Labels()


@dataclass
class LossBreakdown:
    total: float
    seg: float = 0.0
    gaze: float = 0.0
    center: float = 0.0
    # Unweighted frame-averaged directional terms, keyed e.g. "pupil_pred2gt".
    parts: dict = field(default_factory=dict)
    skipped: tuple = ()
    absent: tuple = ()

    def as_dict(self):
        return {"total": self.total, "seg": self.seg, "gaze": self.gaze, "center": self.center, **self.parts}


# -- directional point-set terms ---------------------------------------------------

def _pts(x) -> np.ndarray:
    return np.asarray(getattr(x, "points", x), dtype=float).reshape(-1, 2)


def _require(a, what):
    if len(a) == 0:
        raise EmptyObservation(f"{what} point set is empty")


def _mean_nn_distance(src, dst, backend="kdtree", index=None):
    idx = nearest(src, dst, backend, index)
    d = distances_to(src, dst, idx)
    return float(np.mean(d)), idx, d


def loss_pred_to_gt(pred, gt, backend: str = "kdtree") -> float:
    """Mean distance from each predicted point to its nearest ground-truth pixel."""
    pred, gt = _pts(pred), _pts(gt)
    _require(pred, "predicted")
    _require(gt, "ground-truth")
    return _mean_nn_distance(pred, gt, backend)[0]


def loss_gt_to_pred(pred, gt, backend: str = "kdtree") -> float:
    """Mean distance from each ground-truth pixel to its nearest predicted point."""
    pred, gt = _pts(pred), _pts(gt)
    _require(pred, "predicted")
    _require(gt, "ground-truth")
    return _mean_nn_distance(gt, pred, backend)[0]


def _combine_seg(parts, w: LossWeights) -> float:
    seg = 0.0
    if w.w_pred2gt > 0:
        seg += w.w_pred2gt * (parts["pupil_pred2gt"] + parts["iris_pred2gt"])
    if w.w_gt2pred > 0:
        seg += w.w_gt2pred * (parts["pupil_gt2pred"] + parts["iris_gt2pred"])
    return seg


def _frame_average(values):
    s = 0.0
    for v in values:
        s += v
    return s / len(values)


def segmentation_loss(pupil_clouds, iris_clouds, observations, w: LossWeights, backend: str = "kdtree") -> float:
    """Weighted sum of both directions for both classes, each averaged over frames."""
    if not (len(pupil_clouds) == len(iris_clouds) == len(observations)):
        raise InvalidParameter("frame counts of predictions and observations differ")
    if w.w_pred2gt == 0 and w.w_gt2pred == 0:
        return 0.0
    per = {k: [] for k in ("pupil_pred2gt", "iris_pred2gt", "pupil_gt2pred", "iris_gt2pred")}
    for pc, ic, obs in zip(pupil_clouds, iris_clouds, observations):
        for sem, cloud in (("pupil", pc), ("iris", ic)):
            pred, gt = _pts(cloud), obs.pixels(sem)
            if w.w_pred2gt > 0:
                per[f"{sem}_pred2gt"].append(loss_pred_to_gt(pred, gt, backend))
            if w.w_gt2pred > 0:
                per[f"{sem}_gt2pred"].append(loss_gt_to_pred(pred, gt, backend))
    parts = {k: _frame_average(v) for k, v in per.items() if v}
    return _combine_seg(parts, w)


def _gaze_distance(g, g_gt, squared):
    d = np.asarray(g, float) - np.asarray(g_gt, float)
    n2 = float(d @ d)
    return n2 if squared else float(np.sqrt(n2))


def gaze_loss(pred_gazes, labels, w_gaze: float, squared: bool = False) -> float:
    """``w_gaze`` times the mean over labelled frames of ``|g_n - g_gt_n|``.

    ``pred_gazes`` is indexed by frame. Without labels the loss is 0 and a
    :class:`LabelsAbsent` warning is emitted.
    """
    labels = list(labels)
    if not labels:
        warnings.warn("gaze loss evaluated without labels", LabelsAbsent, stacklevel=2)
        return 0.0
    vals = []
    for lab in labels:
        if not 0 <= lab.frame_index < len(pred_gazes):
            raise InvalidParameter(f"gaze label references missing frame {lab.frame_index}")
        vals.append(_gaze_distance(pred_gazes[lab.frame_index], lab.g, squared))
    return w_gaze * _frame_average(vals)


def center_loss(pred_center, gt_centers, w_center: float) -> float:
    gts = [np.asarray(getattr(c, "c", c), float) for c in gt_centers]
    if not gts:
        warnings.warn("center loss evaluated without labels", LabelsAbsent, stacklevel=2)
        return 0.0
    p = np.asarray(pred_center, float)
    return w_center * _frame_average([float(np.linalg.norm(p - c)) for c in gts])


# -- full model forward -------------------------------------------------------------

@dataclass
class _FrameCache:
    R: np.ndarray
    pupil_c: object      # canonical clouds
    iris_c: object
    X: dict              # semantic -> camera points
    uv: dict             # semantic -> projected points
    p2g: dict = field(default_factory=dict)  # semantic -> gt index per predicted point
    g2p: dict = field(default_factory=dict)  # semantic -> predicted index per gt pixel


@dataclass
class ForwardResult:
    breakdown: LossBreakdown
    frames: list
    n_theta: int
    n_rho: int

    def assignments(self):
        """All nearest-neighbour assignments, for tie detection between probes."""
        out = []
        for fc in self.frames:
            for d in (fc.p2g, fc.g2p):
                for k in sorted(d):
                    out.append(d[k])
        return out


def image_size(observations):
    if not observations:
        raise InvalidParameter("need at least one observation")
    W, H = observations[0].width, observations[0].height
    for o in observations:
        if (o.width, o.height) != (W, H):
            raise InvalidParameter("observations have differing image sizes")
    return W, H


def render_frame(x, n, W, H, n_theta=DEFAULT_N_THETA, n_rho=DEFAULT_N_RHO, sampling="rims"):
    """Projected pupil and iris clouds of frame ``n`` of parameter vector ``x``."""
    fc = _render(x, frame_block(x)[n], W, H, n_theta, n_rho, sampling)
    return fc.uv["pupil"], fc.uv["iris"]


def _render(x, fr, W, H, n_theta, n_rho, sampling):
    r_e, r_i, f = x[0], x[1], x[5]
    T = x[2:5]
    L_p = np.sqrt(r_e * r_e - r_i * r_i)
    pitch, yaw, r_p = fr
    R = rotation_from_pitch_yaw(pitch, yaw)
    pc = canonical_pupil_cloud(r_p, L_p, n_theta, n_rho, sampling)
    ic = canonical_iris_cloud(r_p, r_i, L_p, n_theta, n_rho, sampling)
    X = {"pupil": deform(pc, R, T).points, "iris": deform(ic, R, T).points}
    uv = {k: project_points(v, f, W, H) for k, v in X.items()}
    return _FrameCache(R, pc, ic, X, uv)


def forward(x, observations, labels: Labels, weights: LossWeights, *, n_theta=DEFAULT_N_THETA,
            n_rho=DEFAULT_N_RHO, sampling="rims", backend="kdtree") -> ForwardResult:
    x = np.asarray(x, dtype=float)
    check_constraints(x)
    N = n_frames_of(x)
    if len(observations) != N:
        raise InvalidParameter(f"{N} frames of parameters but {len(observations)} observations")
    W, H = image_size(observations)
    fb = frame_block(x)
    w = weights
    use_seg = w.w_pred2gt > 0 or w.w_gt2pred > 0
    skipped, absent = [], []
    frames = []
    parts = {}
    seg = gaze = center = 0.0

    if use_seg:
        per = {k: [] for k in ("pupil_pred2gt", "iris_pred2gt", "pupil_gt2pred", "iris_gt2pred")}
        for n in range(N):
            fc = _render(x, fb[n], W, H, n_theta, n_rho, sampling)
            obs = observations[n]
            for sem in ("pupil", "iris"):
                pred, gt = fc.uv[sem], obs.pixels(sem)
                if len(gt) == 0:
                    raise EmptyObservation(f"frame {n} has no {sem} pixels")
                if w.w_pred2gt > 0:
                    v, idx, _ = _mean_nn_distance(pred, gt, backend, obs.index(sem) if backend == "kdtree" else None)
                    fc.p2g[sem] = idx
                    per[f"{sem}_pred2gt"].append(v)
                if w.w_gt2pred > 0:
                    v, idx, _ = _mean_nn_distance(gt, pred, backend)
                    fc.g2p[sem] = idx
                    per[f"{sem}_gt2pred"].append(v)
            frames.append(fc)
        parts = {k: _frame_average(v) for k, v in per.items() if v}
        seg = _combine_seg(parts, w)
    else:
        skipped.append("seg")

    if w.w_gaze > 0:
        if labels.gaze:
            gazes = [gaze_from_rotation(rotation_from_pitch_yaw(p, y)) for p, y, _ in fb]
            gaze = gaze_loss(gazes, labels.gaze, w.w_gaze, w.gaze_squared)
        else:
            absent.append("gaze")
    else:
        skipped.append("gaze")

    if w.w_center > 0:
        if labels.centers:
            o2d = project_points(x[2:5][None, :], x[5], W, H)[0]
            center = center_loss(o2d, labels.centers, w.w_center)
        else:
            absent.append("center")
    else:
        skipped.append("center")

    total = seg + gaze + center
    bd = LossBreakdown(total, seg, gaze, center, parts, tuple(skipped), tuple(absent))
    return ForwardResult(bd, frames, n_theta, n_rho)


def total_loss(params, observations, labels: Labels = NO_LABELS, weights: LossWeights = LossWeights(), *,
               n_theta=DEFAULT_N_THETA, n_rho=DEFAULT_N_RHO, sampling="rims", backend="kdtree"):
    """Return ``(total, breakdown)`` for a parameter vector over a sequence."""
    res = forward(params, observations, labels, weights, n_theta=n_theta, n_rho=n_rho, sampling=sampling,
                  backend=backend)
    return res.breakdown.total, res.breakdown
