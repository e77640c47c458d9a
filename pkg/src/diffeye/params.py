"""Flat parameter vector shared by the objectives, the gradient engine and the fitter.

Layout: ``[r_e, r_i, T_x, T_y, T_z, f]`` followed by ``(pitch, yaw, r_p)`` for
each frame, so a sequence of N frames has ``6 + 3 N`` entries.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateGeometry, InvalidParameter
from .geometry import MAX_ANGLE, FrameEyeParams, SharedEyeParams

N_SHARED = 6
N_PER_FRAME = 3
SHARED_NAMES = ("r_e", "r_i", "T_x", "T_y", "T_z", "f")
FRAME_NAMES = ("pitch", "yaw", "r_p")

# Minimum gap r_e - r_i at which L_p = sqrt(r_e^2 - r_i^2) is still differentiated.
SQRT_GUARD = 1e-6


def n_params(n_frames: int) -> int:
    return N_SHARED + N_PER_FRAME * n_frames


def n_frames_of(x) -> int:
    n, rem = divmod(len(x) - N_SHARED, N_PER_FRAME)
    if rem or n < 0:
        raise InvalidParameter(f"parameter vector of length {len(x)} does not match 6 + 3N")
    return n


def names(n_frames: int) -> list[str]:
    out = list(SHARED_NAMES)
    for i in range(n_frames):
        out += [f"{k}[{i}]" for k in FRAME_NAMES]
    return out


def pack(shared: SharedEyeParams, frames) -> np.ndarray:
    x = np.empty(n_params(len(frames)))
    x[:N_SHARED] = [shared.r_e, shared.r_i, *shared.T, shared.f]
    for i, fr in enumerate(frames):
        x[N_SHARED + 3 * i: N_SHARED + 3 * i + 3] = [fr.pitch, fr.yaw, fr.r_p]
    return x


def frame_block(x: np.ndarray) -> np.ndarray:
    """View of the per-frame entries as an (N, 3) array of (pitch, yaw, r_p)."""
    return x[N_SHARED:].reshape(-1, N_PER_FRAME)


def unpack(x) -> tuple[SharedEyeParams, list[FrameEyeParams]]:
    x = np.asarray(x, dtype=float)
    n_frames_of(x)
    shared = SharedEyeParams(float(x[0]), float(x[1]), x[2:5].copy(), float(x[5]))
    frames = [FrameEyeParams(float(p), float(y), float(r)) for p, y, r in frame_block(x)]
    return shared, frames


def check_constraints(x, margin: float = 0.0):
    """Raise unless every entry lies inside its constraint interval by at least ``margin``.

    Violations raise :class:`InvalidParameter`; an iris radius within
    ``SQRT_GUARD`` of the eyeball radius raises :class:`DegenerateGeometry`.
    """
    x = np.asarray(x, dtype=float)
    n_frames_of(x)
    if not np.all(np.isfinite(x)):
        raise InvalidParameter("parameter vector contains non-finite entries")
    r_e, r_i, _, _, T_z, f = x[:N_SHARED]
    fb = frame_block(x)
    for name, value in (("r_e", r_e), ("r_i", r_i), ("T_z", T_z), ("f", f)):
        if value <= margin:
            raise InvalidParameter(f"{name}={value} must exceed {margin}")
    if r_e - r_i < SQRT_GUARD + margin:
        raise DegenerateGeometry(f"r_e - r_i = {r_e - r_i} is below the {SQRT_GUARD} mm guard")
    lim = MAX_ANGLE - margin + (1e-12 if margin == 0 else 0.0)
    if fb.size:
        if np.any(np.abs(fb[:, :2]) > lim):
            raise InvalidParameter("pitch/yaw outside +-80 deg")
        if np.any(fb[:, 2] <= margin):
            raise InvalidParameter("pupil radius must be positive")
        if np.any(r_i - fb[:, 2] <= margin):
            raise InvalidParameter("pupil radius must stay below the iris radius")


# Floors/caps applied after every optimizer step.
RADIUS_FLOOR = 1e-3
RADIUS_GAP = 1e-3
T_Z_FLOOR = 1.0
F_FLOOR = 1.0


def project_feasible(x: np.ndarray) -> np.ndarray:
    """Clamp a parameter vector back into the feasible set (returns a new array)."""
    x = np.array(x, dtype=float)
    # floors chain so that r_p < r_i < r_e always leaves room for each radius
    x[0] = max(x[0], RADIUS_FLOOR + 2 * RADIUS_GAP)
    x[1] = min(max(x[1], RADIUS_FLOOR + RADIUS_GAP), x[0] - RADIUS_GAP)
    x[4] = max(x[4], T_Z_FLOOR)
    x[5] = max(x[5], F_FLOOR)
    fb = frame_block(x)
    np.clip(fb[:, :2], -MAX_ANGLE, MAX_ANGLE, out=fb[:, :2])
    fb[:, 2] = np.clip(fb[:, 2], RADIUS_FLOOR, x[1] - RADIUS_GAP)
    return x


def to_degrees_dict(x) -> dict:
    """Human-facing view: angles converted to degrees."""
    shared, frames = unpack(x)
    return {
        "r_e": shared.r_e, "r_i": shared.r_i, "T": [float(v) for v in shared.T], "f": shared.f,
        "frames": [
            {"pitch_deg": math.degrees(fr.pitch), "yaw_deg": math.degrees(fr.yaw), "r_p": fr.r_p}
            for fr in frames
        ],
    }


def from_degrees_dict(d: dict) -> np.ndarray:
    shared = SharedEyeParams(float(d["r_e"]), float(d["r_i"]), np.asarray(d["T"], float), float(d["f"]))
    frames = [
        FrameEyeParams(math.radians(fr["pitch_deg"]), math.radians(fr["yaw_deg"]), float(fr["r_p"]))
        for fr in d["frames"]
    ]
    return pack(shared, frames)
