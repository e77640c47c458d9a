"""Exact gradients of the total loss and a central-difference oracle to certify them.

The gradient is hand-derived through the chain

    (r_e, r_i) -> L_p -> canonical clouds -> R c + T -> pinhole -> losses

with nearest-neighbour assignments frozen at their forward values. Where a
predicted point coincides exactly with its assigned partner the distance
gradient is taken as zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryTooClose, DegenerateGeometry, InvalidParameter
from .geometry import (
    CANONICAL_GAZE, DEFAULT_N_RHO, DEFAULT_N_THETA, gaze_from_rotation, rotation_derivatives,
    rotation_from_pitch_yaw,
)
from .objectives import NO_LABELS, Labels, LossWeights, forward, image_size
from .params import check_constraints, frame_block, n_frames_of


def _unit_rows(d):
    n = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])
    out = np.zeros_like(d)
    ok = n > 0
    out[ok] = d[ok] / n[ok, None]
    return out


def _project_backward(X, f, g_uv):
    """Pull a gradient w.r.t. projected points back to (camera points, focal length)."""
    z = X[:, 2]
    gx, gy = g_uv[:, 0], g_uv[:, 1]
    gX = np.empty_like(X)
    gX[:, 0] = gx * f / z
    gX[:, 1] = gy * f / z
    gX[:, 2] = -(gx * X[:, 0] + gy * X[:, 1]) * f / (z * z)
    gf = float(np.sum((gx * X[:, 0] + gy * X[:, 1]) / z))
    return gX, gf


def _seg_grad_uv(fc, sem, obs, w: LossWeights, scale):
    """dL/d(projected points) for one class of one frame."""
    pred = fc.uv[sem]
    gt = obs.pixels(sem)
    g = np.zeros_like(pred)
    if sem in fc.p2g:
        idx = fc.p2g[sem]
        g += (w.w_pred2gt * scale / len(pred)) * _unit_rows(pred - gt[idx])
    if sem in fc.g2p:
        idx = fc.g2p[sem]
        contrib = (w.w_gt2pred * scale / len(gt)) * _unit_rows(pred[idx] - gt)
        g[:, 0] += np.bincount(idx, contrib[:, 0], minlength=len(pred))
        g[:, 1] += np.bincount(idx, contrib[:, 1], minlength=len(pred))
    return g


def loss_and_gradient(params, observations, labels: Labels = NO_LABELS, weights: LossWeights = LossWeights(), *,
                      n_theta=DEFAULT_N_THETA, n_rho=DEFAULT_N_RHO, sampling="rims", backend="kdtree"):
    """Return ``(loss, gradient, breakdown)``; the loss equals ``objectives.total_loss`` exactly."""
    x = np.asarray(params, dtype=float)
    res = forward(x, observations, labels, weights, n_theta=n_theta, n_rho=n_rho, sampling=sampling,
                  backend=backend)
    N = n_frames_of(x)
    W, H = image_size(observations)
    grad = np.zeros_like(x)
    gfb = frame_block(grad)
    fb = frame_block(x)
    r_e, r_i, f = x[0], x[1], x[5]
    T = x[2:5]
    L_p = math.sqrt(r_e * r_e - r_i * r_i)
    w = weights
    g_Lp = 0.0

    if res.frames:
        scale = 1.0 / N
        for n, fc in enumerate(res.frames):
            obs = observations[n]
            dR_dp, dR_dy = rotation_derivatives(fb[n, 0], fb[n, 1])
            for sem, canon in (("pupil", fc.pupil_c), ("iris", fc.iris_c)):
                g_uv = _seg_grad_uv(fc, sem, obs, w, scale)
                gX, gf = _project_backward(fc.X[sem], f, g_uv)
                grad[5] += gf
                grad[2:5] += gX.sum(axis=0)
                # X = R c + T
                gR = gX.T @ canon.points
                gfb[n, 0] += float(np.sum(gR * dR_dp))
                gfb[n, 1] += float(np.sum(gR * dR_dy))
                gc = gX @ fc.R
                cos_t, sin_t = np.cos(canon.theta), np.sin(canon.theta)
                radial = gc[:, 0] * cos_t + gc[:, 1] * sin_t
                rho = canon.rho
                if sem == "pupil":
                    gfb[n, 2] += float(np.sum(radial * rho))
                else:
                    gfb[n, 2] += float(np.sum(radial * (1.0 - rho)))
                    grad[1] += float(np.sum(radial * rho))
                g_Lp -= float(np.sum(gc[:, 2]))

    if w.w_gaze > 0 and labels.gaze:
        scale = w.w_gaze / len(labels.gaze)
        for lab in labels.gaze:
            n = lab.frame_index
            dR_dp, dR_dy = rotation_derivatives(fb[n, 0], fb[n, 1])
            g = gaze_from_rotation(rotation_from_pitch_yaw(fb[n, 0], fb[n, 1]))
            d = g - lab.g
            if w.gaze_squared:
                gg = 2.0 * d
            else:
                nd = float(np.sqrt(d @ d))
                gg = d / nd if nd > 0 else np.zeros(3)
            gg = scale * gg
            gfb[n, 0] += float(gg @ (dR_dp @ CANONICAL_GAZE))
            gfb[n, 1] += float(gg @ (dR_dy @ CANONICAL_GAZE))

    if w.w_center > 0 and labels.centers:
        o2d = np.array([f * T[0] / T[2] + W / 2.0, f * T[1] / T[2] + H / 2.0])
        g_uv = np.zeros((1, 2))
        for c in labels.centers:
            d = o2d - c.c
            nd = float(np.sqrt(d @ d))
            if nd > 0:
                g_uv[0] += d / nd
        g_uv *= w.w_center / len(labels.centers)
        gX, gf = _project_backward(T[None, :], f, g_uv)
        grad[2:5] += gX[0]
        grad[5] += gf

    if g_Lp != 0.0:
        grad[0] += g_Lp * r_e / L_p
        grad[1] -= g_Lp * r_i / L_p
    return res.breakdown.total, grad, res.breakdown


def _loss_only(x, observations, labels, weights, **kw):
    res = forward(x, observations, labels, weights, **kw)
    return res.breakdown.total, res.assignments()


def _same_assignments(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


@dataclass
class FDResult:
    gradient: np.ndarray
    # False where the nearest-neighbour assignments differ between the two probes.
    smooth: np.ndarray


def finite_difference_gradient(params, observations, labels: Labels = NO_LABELS,
                               weights: LossWeights = LossWeights(), eps: float = 1e-6, **kw) -> FDResult:
    """Central differences with assignments re-derived at every probe."""
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    x = np.asarray(params, dtype=float)
    try:
        check_constraints(x, margin=2 * eps)
    except (InvalidParameter, DegenerateGeometry) as exc:
        raise BoundaryTooClose(f"parameters within 2*eps of a constraint boundary: {exc}") from exc
    g = np.zeros_like(x)
    smooth = np.ones(len(x), dtype=bool)
    for i in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        lp, ap = _loss_only(xp, observations, labels, weights, **kw)
        lm, am = _loss_only(xm, observations, labels, weights, **kw)
        g[i] = (lp - lm) / (2 * eps)
        smooth[i] = _same_assignments(ap, am)
    return FDResult(g, smooth)


def numeric_gradient(fn, x, eps=1e-6):
    """Central differences of an arbitrary scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (fn(x + e) - fn(x - e)) / (2 * eps)
    return g


def relative_error(analytic, numeric, floor: float):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, float)
    b = np.asarray(numeric, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
