"""Synthetic eye sequences with known ground truth, and a scanline mask rasterizer."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import CameraIntrinsics, project_points
from .errors import InvalidConfig, InvalidParameter
from .geometry import (
    MAX_ANGLE, FrameEyeParams, SharedEyeParams, deform, gaze_from_rotation, pupil_iris_distance,
    rotation_from_pitch_yaw, PointCloud, Frame, Semantic,
)
from .objectives import CenterLabel, GazeLabel, Labels, SemanticObservation
from .params import pack

BACKGROUND, IRIS, PUPIL = 0, 127, 255
CLASS_CODES = (BACKGROUND, IRIS, PUPIL)

# Adjacent projected rim samples must be closer than this (pixels).
RIM_SPACING = 0.5


@dataclass(eq=False)
class Bitmask:
    width: int
    height: int
    data: np.ndarray  # (height, width) uint8 with codes 0/127/255

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.shape != (self.height, self.width):
            raise InvalidParameter(f"mask data shape {self.data.shape} != ({self.height}, {self.width})")

    def __eq__(self, other):
        return (isinstance(other, Bitmask) and self.width == other.width and self.height == other.height
                and np.array_equal(self.data, other.data))

    def count(self, code) -> int:
        return int(np.count_nonzero(self.data == code))


# -- rasterization ------------------------------------------------------------------

def fill_polygon(vertices: np.ndarray, W: int, H: int) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centres; returns an (H, W) bool array.

    Pixel (u, v) is inside when its centre (u + 0.5, v + 0.5) is. Edges use the
    half-open rule ``y0 <= y < y1`` so shared vertices are counted once.
    """
    P = np.asarray(vertices, dtype=float)
    Q = np.roll(P, -1, axis=0)
    y0, y1 = P[:, 1], Q[:, 1]
    lo, hi = np.minimum(y0, y1), np.maximum(y0, y1)
    # rows whose centre y = v + 0.5 satisfies lo <= y < hi
    v_start = np.maximum(np.ceil(lo - 0.5), 0).astype(np.int64)
    v_stop = np.minimum(np.ceil(hi - 0.5), H).astype(np.int64)
    counts = np.maximum(v_stop - v_start, 0)
    mask = np.zeros((H, W), dtype=bool)
    if counts.sum() == 0:
        return mask
    e = np.repeat(np.arange(len(P)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    rows = v_start[e] + offs
    y = rows + 0.5
    t = (y - y0[e]) / (y1[e] - y0[e])
    xs = P[e, 0] + t * (Q[e, 0] - P[e, 0])
    order = np.lexsort((xs, rows))
    rows, xs = rows[order], xs[order]
    # crossings pair up within each row
    starts = np.ones(len(rows), dtype=bool)
    starts[1:] = rows[1:] != rows[:-1]
    rank = np.arange(len(rows)) - np.maximum.accumulate(np.where(starts, np.arange(len(rows)), 0))
    left = rank % 2 == 0
    li = np.flatnonzero(left)
    li = li[li + 1 < len(rows)]
    li = li[rows[li + 1] == rows[li]]
    r = rows[li]
    u0 = np.clip(np.ceil(xs[li] - 0.5), 0, W).astype(np.int64)
    u1 = np.clip(np.ceil(xs[li + 1] - 0.5), 0, W).astype(np.int64)
    diff = np.zeros((H, W + 1), dtype=np.int64)
    np.add.at(diff, (r, u0), 1)
    np.add.at(diff, (r, u1), -1)
    return np.cumsum(diff[:, :W], axis=1) > 0


def _ring(radius, L_p, n):
    th = 2.0 * np.pi * np.arange(n) / n
    pts = np.stack([radius * np.cos(th), radius * np.sin(th), np.full(n, -L_p)], axis=1)
    return PointCloud(pts, Frame.CANONICAL, Semantic.IRIS)


def projected_rim(radius, shared: SharedEyeParams, frame: FrameEyeParams, K: CameraIntrinsics,
                  spacing=RIM_SPACING, n0=64):
    """Projected circle of ``radius`` in the iris plane, sampled densely enough for ``spacing``."""
    L_p = pupil_iris_distance(shared.r_e, shared.r_i)
    R = rotation_from_pitch_yaw(frame.pitch, frame.yaw)
    n = n0
    while True:
        uv = project_points(deform(_ring(radius, L_p, n), R, shared.T).points, K.f, K.W, K.H)
        gaps = np.linalg.norm(uv - np.roll(uv, -1, axis=0), axis=1)
        if gaps.max() < spacing:
            return uv
        n = int(math.ceil(n * gaps.max() / (0.9 * spacing))) + 1


def rasterize_regions(shared, frame, K, jitter_sigma=0.0, rng=None):
    """Boolean (pupil, iris) regions; iris excludes the pupil."""
    frame.check_against(shared)
    rims = [projected_rim(frame.r_p, shared, frame, K), projected_rim(shared.r_i, shared, frame, K)]
    if jitter_sigma > 0:
        rims = [r + rng.normal(0.0, jitter_sigma, r.shape) for r in rims]
    pupil = fill_polygon(rims[0], K.W, K.H)
    iris = fill_polygon(rims[1], K.W, K.H) & ~pupil
    return pupil, iris


def regions_to_mask(pupil, iris) -> Bitmask:
    H, W = pupil.shape
    data = np.zeros((H, W), dtype=np.uint8)
    data[iris] = IRIS
    data[pupil] = PUPIL
    return Bitmask(W, H, data)


def rasterize(shared: SharedEyeParams, frame: FrameEyeParams, K: CameraIntrinsics) -> Bitmask:
    """Render the pupil disc and the iris annulus of one frame into a class mask."""
    return regions_to_mask(*rasterize_regions(shared, frame, K))


def rasterize_sequence(x, K: CameraIntrinsics):
    from .params import unpack
    shared, frames = unpack(x)
    return [rasterize(shared, fr, K) for fr in frames]


# -- generator ----------------------------------------------------------------------

@dataclass
class SynthConfig:
    n_frames: int = 4
    width: int = 128
    height: int = 128
    r_e_range: tuple = (11.0, 13.0)
    r_i_range: tuple = (5.5, 6.5)
    r_p_range: tuple = (1.5, 3.0)
    T_x_range: tuple = (-2.0, 2.0)
    T_y_range: tuple = (-2.0, 2.0)
    T_z_range: tuple = (30.0, 38.0)
    f_range: tuple = (100.0, 140.0)
    max_angle_deg: float = 25.0
    motion: str = "iid"  # "iid" or "smooth"
    max_step_deg: float = 5.0
    pixel_noise_sigma: float = 0.0
    dropout_fraction: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_frames < 1:
            raise InvalidConfig("n_frames must be at least 1")
        if self.width < 1 or self.height < 1:
            raise InvalidConfig("image size must be positive")
        for name in ("r_e_range", "r_i_range", "r_p_range", "T_x_range", "T_y_range", "T_z_range", "f_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise InvalidConfig(f"{name} is empty: {lo} > {hi}")
        if min(self.r_p_range[0], self.r_i_range[0], self.r_e_range[0], self.f_range[0], self.T_z_range[0]) <= 0:
            raise InvalidConfig("radii, focal length and T_z ranges must be positive")
        if self.r_i_range[1] >= self.r_e_range[0]:
            raise InvalidConfig("iris radius range must lie below the eyeball radius range")
        if self.r_p_range[1] >= self.r_i_range[0]:
            raise InvalidConfig("pupil radius range must lie below the iris radius range")
        if not 0 <= self.max_angle_deg <= 80:
            raise InvalidConfig("max_angle_deg must be within [0, 80]")
        if self.motion not in ("iid", "smooth"):
            raise InvalidConfig(f"unknown motion model {self.motion!r}")
        if not 0 <= self.dropout_fraction < 1:
            raise InvalidConfig("dropout_fraction must be in [0, 1)")
        if self.pixel_noise_sigma < 0:
            raise InvalidConfig("pixel_noise_sigma must be nonnegative")
        return self

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown synth config keys: {sorted(extra)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw).validate()


@dataclass
class SyntheticSequence:
    config: SynthConfig
    params: np.ndarray          # ground-truth parameter vector
    masks: list                 # observed (noisy) Bitmasks
    clean_masks: list           # noiseless Bitmasks
    labels: Labels              # exact gaze labels and projected centres for every frame
    K: CameraIntrinsics
    observations: list = field(default_factory=list)

    @property
    def gazes(self):
        return np.array([l.g for l in self.labels.gaze])

    @property
    def center(self):
        return self.labels.centers[0].c


def _uniform(rng, rng_pair):
    lo, hi = rng_pair
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _trajectory(cfg, rng):
    a = math.radians(cfg.max_angle_deg)
    n = cfg.n_frames
    if cfg.motion == "iid":
        return rng.uniform(-a, a, n), rng.uniform(-a, a, n), rng.uniform(*cfg.r_p_range, n)
    step = math.radians(cfg.max_step_deg)
    p, y = np.empty(n), np.empty(n)
    rp = np.empty(n)
    p[0], y[0] = rng.uniform(-a, a, 2)
    rp[0] = rng.uniform(*cfg.r_p_range)
    span = cfg.r_p_range[1] - cfg.r_p_range[0]
    for k in range(1, n):
        p[k] = np.clip(p[k - 1] + rng.uniform(-step, step), -a, a)
        y[k] = np.clip(y[k - 1] + rng.uniform(-step, step), -a, a)
        rp[k] = np.clip(rp[k - 1] + rng.uniform(-0.1, 0.1) * span, *cfg.r_p_range)
    return p, y, rp


def generate_sequence(cfg: SynthConfig) -> SyntheticSequence:
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0])
    r_e = _uniform(rng, cfg.r_e_range)
    r_i = _uniform(rng, cfg.r_i_range)
    T = np.array([_uniform(rng, cfg.T_x_range), _uniform(rng, cfg.T_y_range), _uniform(rng, cfg.T_z_range)])
    f = _uniform(rng, cfg.f_range)
    shared = SharedEyeParams(r_e, r_i, T, f)
    pitch, yaw, rp = _trajectory(cfg, rng)
    frames = [FrameEyeParams(float(np.clip(p, -MAX_ANGLE, MAX_ANGLE)), float(np.clip(y, -MAX_ANGLE, MAX_ANGLE)),
                             float(r)) for p, y, r in zip(pitch, yaw, rp)]
    K = CameraIntrinsics(f, cfg.width, cfg.height)
    center = project_points(T[None, :], f, cfg.width, cfg.height)[0]

    masks, clean, gaze_labels, centers = [], [], [], []
    for n, fr in enumerate(frames):
        clean.append(regions_to_mask(*rasterize_regions(shared, fr, K)))
        frng = np.random.default_rng([cfg.seed, 1, n])
        if cfg.pixel_noise_sigma > 0:
            pupil, iris = rasterize_regions(shared, fr, K, cfg.pixel_noise_sigma, frng)
            m = regions_to_mask(pupil, iris)
        else:
            m = Bitmask(clean[-1].width, clean[-1].height, clean[-1].data.copy())
        if cfg.dropout_fraction > 0:
            fg = np.flatnonzero(m.data.ravel() != BACKGROUND)
            drop = frng.random(fg.size) < cfg.dropout_fraction
            flat = m.data.ravel()
            flat[fg[drop]] = BACKGROUND
            m = Bitmask(m.width, m.height, flat.reshape(m.height, m.width))
        masks.append(m)
        g = gaze_from_rotation(rotation_from_pitch_yaw(fr.pitch, fr.yaw))
        gaze_labels.append(GazeLabel(g / np.linalg.norm(g), n))
        centers.append(CenterLabel(center, n))
    seq = SyntheticSequence(cfg, pack(shared, frames), masks, clean, Labels(gaze_labels, centers), K)
    seq.observations = [SemanticObservation.from_mask(m) for m in masks]
    return seq
