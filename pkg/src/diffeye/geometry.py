"""Parametric eye model: canonical pupil/iris templates, rotation and rigid deformation.

Conventions: camera x points right, y down, z forward. Lengths are in
millimetres, angles in radians. The canonical eye sits at the origin looking
along (0, 0, -1), towards the camera.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, FrameMismatch, InvalidParameter

MAX_ANGLE = math.radians(80.0)
# Slack so that values clamped to exactly +-80 deg survive a deg/rad round trip.
_ANGLE_SLACK = 1e-12

DEFAULT_N_THETA = 72
DEFAULT_N_RHO = 8

CANONICAL_GAZE = np.array([0.0, 0.0, -1.0])


class Frame(enum.Enum):
    CANONICAL = "canonical"
    CAMERA = "camera"


class Semantic(enum.Enum):
    PUPIL = "pupil"
    IRIS = "iris"


@dataclass(frozen=True)
class SharedEyeParams:
    """Sequence-constant unknowns.

    ``r_i < r_e`` is not checked here; :func:`pupil_iris_distance` raises
    :class:`DegenerateGeometry` when it is violated.
    """

    r_e: float
    r_i: float
    T: np.ndarray
    f: float

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float).reshape(3)
        object.__setattr__(self, "T", T)
        if not (self.r_e > 0 and self.r_i > 0):
            raise InvalidParameter(f"radii must be positive, got r_e={self.r_e}, r_i={self.r_i}")
        if not T[2] > 0:
            raise InvalidParameter(f"eyeball must be in front of the camera, got T_z={T[2]}")
        if not self.f > 0:
            raise InvalidParameter(f"focal length must be positive, got f={self.f}")

    @property
    def L_p(self) -> float:
        return pupil_iris_distance(self.r_e, self.r_i)


@dataclass(frozen=True)
class FrameEyeParams:
    """Per-frame unknowns. Roll is identically zero."""

    pitch: float
    yaw: float
    r_p: float

    def __post_init__(self):
        if abs(self.pitch) > MAX_ANGLE + _ANGLE_SLACK or abs(self.yaw) > MAX_ANGLE + _ANGLE_SLACK:
            raise InvalidParameter(
                f"pitch/yaw must be within +-80 deg, got {math.degrees(self.pitch):.3f}, "
                f"{math.degrees(self.yaw):.3f}"
            )
        if not self.r_p > 0:
            raise InvalidParameter(f"pupil radius must be positive, got {self.r_p}")

    def check_against(self, shared: SharedEyeParams):
        if not self.r_p < shared.r_i:
            raise InvalidParameter(f"pupil radius {self.r_p} must be below iris radius {shared.r_i}")


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame_tag: Frame
    semantic_tag: Semantic
    # (rho, theta) for each point, kept so derivatives can be taken later.
    rho: np.ndarray | None = field(default=None, repr=False, compare=False)
    theta: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.points)


def clamp_angle(a: float) -> float:
    return float(min(max(a, -MAX_ANGLE), MAX_ANGLE))


def pupil_iris_distance(r_e: float, r_i: float) -> float:
    """Distance from the eyeball centre to the iris/pupil plane, sqrt(r_e^2 - r_i^2)."""
    if not (r_i > 0 and r_e > 0):
        raise InvalidParameter(f"radii must be positive, got r_e={r_e}, r_i={r_i}")
    if r_i >= r_e:
        raise DegenerateGeometry(f"iris radius {r_i} must be smaller than eyeball radius {r_e}")
    return math.sqrt(r_e * r_e - r_i * r_i)


def _check_counts(n_theta, n_rho, min_rho=1):
    if n_theta < 1 or n_rho < min_rho:
        raise InvalidParameter(f"need n_theta >= 1 and n_rho >= {min_rho}, got {n_theta}, {n_rho}")


SAMPLINGS = ("rims", "centered")


def theta_samples(n_theta: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_theta) / n_theta


def pupil_rho_samples(n_rho: int, sampling: str = "rims") -> np.ndarray:
    """Radial samples of the pupil disc.

    ``rims``: k / n_rho for k = 1..n_rho (rho = 0 would put n_theta copies at the
    centre). ``centered``: (k + 0.5) / n_rho for k = 0..n_rho - 1, the centres of
    n_rho equal-width bands.
    """
    if sampling == "centered":
        return (np.arange(n_rho) + 0.5) / n_rho
    _check_sampling(sampling)
    return np.arange(1, n_rho + 1) / n_rho


def iris_rho_samples(n_rho: int, sampling: str = "rims") -> np.ndarray:
    """Radial samples of the iris annulus; ``rims`` includes both rho = 0 and rho = 1."""
    if sampling == "centered":
        return (np.arange(n_rho) + 0.5) / n_rho
    _check_sampling(sampling)
    return np.arange(n_rho) / (n_rho - 1)


def _check_sampling(sampling):
    if sampling not in SAMPLINGS:
        raise InvalidParameter(f"unknown radial sampling {sampling!r}")


def _grid(rho, theta):
    # Outer loop over rho, inner loop over theta.
    R, TH = np.meshgrid(rho, theta, indexing="ij")
    return R.ravel(), TH.ravel()


def canonical_pupil_cloud(r_p, L_p, n_theta=DEFAULT_N_THETA, n_rho=DEFAULT_N_RHO,
                          sampling="rims") -> PointCloud:
    if not r_p > 0:
        raise InvalidParameter(f"pupil radius must be positive, got {r_p}")
    _check_counts(n_theta, n_rho)
    rho, theta = _grid(pupil_rho_samples(n_rho, sampling), theta_samples(n_theta))
    r = r_p * rho
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), np.full_like(r, -L_p)], axis=1)
    return PointCloud(pts, Frame.CANONICAL, Semantic.PUPIL, rho, theta)


def canonical_iris_cloud(r_p, r_i, L_p, n_theta=DEFAULT_N_THETA, n_rho=DEFAULT_N_RHO,
                         sampling="rims") -> PointCloud:
    if not (0 < r_p < r_i):
        raise InvalidParameter(f"need 0 < r_p < r_i, got r_p={r_p}, r_i={r_i}")
    _check_counts(n_theta, n_rho, min_rho=2 if sampling == "rims" else 1)
    rho, theta = _grid(iris_rho_samples(n_rho, sampling), theta_samples(n_theta))
    r = r_p + rho * (r_i - r_p)
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), np.full_like(r, -L_p)], axis=1)
    return PointCloud(pts, Frame.CANONICAL, Semantic.IRIS, rho, theta)


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _drot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def rotation_from_pitch_yaw(pitch: float, yaw: float) -> np.ndarray:
    """R = R_y(yaw) @ R_x(pitch). Callers clamp the angles to +-80 deg first."""
    return rot_y(yaw) @ rot_x(pitch)


def rotation_derivatives(pitch: float, yaw: float):
    """(dR/dpitch, dR/dyaw) for :func:`rotation_from_pitch_yaw`."""
    return rot_y(yaw) @ _drot_x(pitch), _drot_y(yaw) @ rot_x(pitch)


def gaze_from_rotation(R: np.ndarray) -> np.ndarray:
    return R @ CANONICAL_GAZE


def pitch_yaw_from_gaze(g) -> tuple[float, float]:
    """Inverse of ``gaze_from_rotation(rotation_from_pitch_yaw(pitch, yaw))``."""
    g = np.asarray(g, dtype=float)
    g = g / np.linalg.norm(g)
    pitch = math.asin(min(max(g[1], -1.0), 1.0))
    yaw = math.atan2(-g[0], -g[2])
    return pitch, yaw


def deform(cloud: PointCloud, R: np.ndarray, T) -> PointCloud:
    """Rigidly move a canonical cloud into camera coordinates: p -> R p + T."""
    if cloud.frame_tag is not Frame.CANONICAL:
        raise FrameMismatch(f"deform expects a canonical cloud, got {cloud.frame_tag.value}")
    pts = cloud.points @ np.asarray(R).T + np.asarray(T, dtype=float)
    return PointCloud(pts, Frame.CAMERA, cloud.semantic_tag, cloud.rho, cloud.theta)


def eyeball_and_pupil_centers(shared: SharedEyeParams, frame: FrameEyeParams):
    """Return (o_e, o_i); the pupil centre coincides with o_i."""
    L_p = pupil_iris_distance(shared.r_e, shared.r_i)
    g = gaze_from_rotation(rotation_from_pitch_yaw(frame.pitch, frame.yaw))
    o_e = shared.T.copy()
    return o_e, o_e + L_p * g


def eye_clouds(shared: SharedEyeParams, frame: FrameEyeParams,
               n_theta=DEFAULT_N_THETA, n_rho=DEFAULT_N_RHO, sampling="rims"):
    """Pupil and iris clouds of one frame, in camera coordinates."""
    frame.check_against(shared)
    L_p = shared.L_p
    R = rotation_from_pitch_yaw(frame.pitch, frame.yaw)
    pupil = canonical_pupil_cloud(frame.r_p, L_p, n_theta, n_rho, sampling)
    iris = canonical_iris_cloud(frame.r_p, shared.r_i, L_p, n_theta, n_rho, sampling)
    return deform(pupil, R, shared.T), deform(iris, R, shared.T)
