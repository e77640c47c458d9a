"""Pinhole projection with a single focal length and the principal point at the image centre."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, FrameMismatch, InvalidParameter
from .geometry import Frame, PointCloud, Semantic, SharedEyeParams

EPS_Z = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    W: int
    H: int

    def __post_init__(self):
        if not self.f > 0:
            raise InvalidParameter(f"focal length must be positive, got {self.f}")
        if self.W < 1 or self.H < 1:
            raise InvalidParameter(f"image size must be at least 1x1, got {self.W}x{self.H}")

    @property
    def principal_point(self) -> np.ndarray:
        return np.array([self.W / 2.0, self.H / 2.0])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.W / 2.0], [0.0, self.f, self.H / 2.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PixelCloud:
    points: np.ndarray
    semantic_tag: Semantic

    def __len__(self):
        return len(self.points)


def project_points(X: np.ndarray, f: float, W: float, H: float, eps_z: float = EPS_Z) -> np.ndarray:
    """Project an (n, 3) array; points are kept even if they fall outside the image."""
    X = np.asarray(X, dtype=float)
    z = X[..., 2]
    bad = np.flatnonzero(z <= eps_z)
    if bad.size:
        raise BehindCamera(bad, eps_z)
    out = np.empty(X.shape[:-1] + (2,))
    out[..., 0] = f * X[..., 0] / z + W / 2.0
    out[..., 1] = f * X[..., 1] / z + H / 2.0
    return out


def project(cloud: PointCloud, K: CameraIntrinsics, eps_z: float = EPS_Z) -> PixelCloud:
    if cloud.frame_tag is not Frame.CAMERA:
        raise FrameMismatch(f"project expects a camera-frame cloud, got {cloud.frame_tag.value}")
    return PixelCloud(project_points(cloud.points, K.f, K.W, K.H, eps_z), cloud.semantic_tag)


def project_eyeball_center(shared: SharedEyeParams, K: CameraIntrinsics, eps_z: float = EPS_Z) -> np.ndarray:
    return project_points(shared.T[None, :], K.f, K.W, K.H, eps_z)[0]
