"""Joint fitting of shared and per-frame eye parameters to a sequence of masks.

Adam-style updates in a rescaled parameter space (millimetres, pixels and
radians differ by orders of magnitude), followed by projection back into the
feasible set after every step.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .diffengine import loss_and_gradient
from .errors import FitDiverged, InvalidParameter
from .geometry import DEFAULT_N_RHO, DEFAULT_N_THETA, MAX_ANGLE, pitch_yaw_from_gaze
from .metrics import gazes_of
from .objectives import NO_LABELS, Labels, LossWeights
from .params import N_SHARED, frame_block, n_params, project_feasible, unpack

log = logging.getLogger(__name__)

DEFAULT_SHARED = dict(r_e=12.0, r_i=6.0, T=(0.0, 0.0, 35.0))
DEFAULT_R_P = 2.0

# Step scale per parameter: r_e, r_i, T_x, T_y, T_z, f; then pitch, yaw, r_p.
SHARED_SCALE = np.array([0.5, 0.25, 0.5, 0.5, 2.0, 10.0])
FRAME_SCALE = np.array([0.1, 0.1, 0.1])

PRESETS = {
    "sem": LossWeights(1.0, 1.0, 0.0, 0.0),
    "sem+gaze": LossWeights(1.0, 1.0, 20.0, 0.0),
    "sem+gaze+cent": LossWeights(1.0, 1.0, 20.0, 0.2),
    "gaze": LossWeights(0.0, 0.0, 20.0, 0.0),
}


@dataclass(frozen=True)
class InitStrategy:
    kind: str = "mask"  # "defaults", "mask" or "random"
    # For "random": name -> (lo, hi); names as in params.SHARED_NAMES plus pitch/yaw (radians) and r_p.
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("defaults", "mask", "random"):
            raise InvalidParameter(f"unknown init strategy {self.kind!r}")


RANDOM_RANGES = {
    "r_e": (11.0, 13.0), "r_i": (5.0, 7.0), "T_x": (-3.0, 3.0), "T_y": (-3.0, 3.0), "T_z": (28.0, 42.0),
    "f_rel": (0.7, 1.3), "pitch": (-0.3, 0.3), "yaw": (-0.3, 0.3), "r_p": (1.5, 3.0),
}


@dataclass(frozen=True)
class FitConfig:
    weights: LossWeights = PRESETS["sem+gaze"]
    max_iters: int = 300
    step_size: float = 0.05
    schedule: str = "cosine"  # "constant" or "cosine"
    final_fraction: float = 0.02
    init: InitStrategy = InitStrategy()
    seed: int = 0
    convergence_tol: float = 1e-7
    patience: int = 20
    restarts: int = 3
    screen_fraction: float = 0.2
    n_theta: int = DEFAULT_N_THETA
    n_rho: int = DEFAULT_N_RHO
    sampling: str = "centered"

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidParameter("max_iters must be at least 1")
        if not self.step_size > 0:
            raise InvalidParameter("step_size must be positive")
        if self.restarts < 1:
            raise InvalidParameter("restarts must be at least 1")
        if not 0 < self.screen_fraction <= 1:
            raise InvalidParameter("screen_fraction must be in (0, 1]")
        if self.schedule not in ("constant", "cosine"):
            raise InvalidParameter(f"unknown schedule {self.schedule!r}")


@dataclass
class FitReport:
    params: np.ndarray
    trajectory: list            # (iteration, total, {term: value})
    converged: bool
    wall_time: float
    final_loss: float
    restart: int = 0
    labeled_frames: tuple = ()
    init_warning: str = ""
    metrics: dict | None = None

    @property
    def shared(self):
        return unpack(self.params)[0]

    @property
    def frames(self):
        return unpack(self.params)[1]

    @property
    def gazes(self) -> np.ndarray:
        g = gazes_of(self.params)
        return g / np.linalg.norm(g, axis=1, keepdims=True)


# -- initialisation -----------------------------------------------------------------

def _defaults(n_frames, W):
    x = np.empty(n_params(n_frames))
    x[:N_SHARED] = [DEFAULT_SHARED["r_e"], DEFAULT_SHARED["r_i"], *DEFAULT_SHARED["T"], float(W)]
    frame_block(x)[:] = [0.0, 0.0, DEFAULT_R_P]
    return x


def _semi_major(pix):
    if len(pix) < 3:
        return math.sqrt(len(pix) / math.pi)
    lam = np.linalg.eigvalsh(np.cov(pix.T))
    return 2.0 * math.sqrt(max(lam[-1], 0.0))


def _mask_heuristic(observations, W, H):
    x = _defaults(len(observations), W)
    r_e, f, T_z = x[0], x[5], x[4]
    disks = [np.concatenate([o.pupil_pixels, o.iris_pixels]) for o in observations]
    iris_a = np.median([_semi_major(d) for d in disks])
    # iris plane depth, iterated once through L_p
    r_i = DEFAULT_SHARED["r_i"]
    for _ in range(3):
        z = T_z - math.sqrt(r_e * r_e - r_i * r_i)
        r_i = float(np.clip(iris_a * z / f, 3.0, 0.8 * r_e))
    L_p = math.sqrt(r_e * r_e - r_i * r_i)
    z = T_z - L_p
    centroids = np.array([o.pupil_pixels.mean(axis=0) for o in observations])
    mean_c = centroids.mean(axis=0)
    x[1] = r_i
    x[2] = (mean_c[0] - W / 2.0) * z / f
    x[3] = (mean_c[1] - H / 2.0) * z / f
    o_e = np.array([f * x[2] / T_z + W / 2.0, f * x[3] / T_z + H / 2.0])
    fb = frame_block(x)
    for k, o in enumerate(observations):
        gxy = (centroids[k] - o_e) * z / (f * L_p)
        nrm = np.linalg.norm(gxy)
        if nrm > 0.95:
            gxy *= 0.95 / nrm
        g = np.array([gxy[0], gxy[1], -math.sqrt(1.0 - gxy @ gxy)])
        fb[k, 0], fb[k, 1] = pitch_yaw_from_gaze(g)
        fb[k, 2] = float(np.clip(_semi_major(o.pupil_pixels) * z / f, 0.3, r_i - 0.3))
    return x


def init_parameters(strategy: InitStrategy, observations, seed: int = 0):
    """Return ``(x, warning)``; ``warning`` is non-empty when the strategy fell back to defaults."""
    if not observations:
        raise InvalidParameter("need at least one observation")
    W, H = observations[0].width, observations[0].height
    n = len(observations)
    if strategy.kind == "defaults":
        return _defaults(n, W), ""
    if strategy.kind == "mask":
        if any(len(o.pupil_pixels) == 0 or len(o.iris_pixels) == 0 for o in observations):
            return _defaults(n, W), "empty masks: mask heuristic fell back to defaults"
        return project_feasible(_mask_heuristic(observations, W, H)), ""
    ranges = {**RANDOM_RANGES, **strategy.ranges}
    rng = np.random.default_rng([seed, 11])
    x = np.empty(n_params(n))
    x[0] = rng.uniform(*ranges["r_e"])
    x[1] = rng.uniform(*ranges["r_i"])
    x[2] = rng.uniform(*ranges["T_x"])
    x[3] = rng.uniform(*ranges["T_y"])
    x[4] = rng.uniform(*ranges["T_z"])
    x[5] = W * rng.uniform(*ranges["f_rel"])
    fb = frame_block(x)
    fb[:, 0] = rng.uniform(*ranges["pitch"], n)
    fb[:, 1] = rng.uniform(*ranges["yaw"], n)
    fb[:, 2] = rng.uniform(*ranges["r_p"], n)
    return project_feasible(x), ""


def _perturb(x, rng):
    y = x.copy()
    y[0] *= rng.uniform(0.92, 1.08)
    y[1] *= rng.uniform(0.9, 1.1)
    y[4] *= rng.uniform(0.85, 1.15)
    y[5] *= rng.uniform(0.85, 1.15)
    fb = frame_block(y)
    fb[:, :2] += rng.normal(0.0, 0.08, (len(fb), 2))
    return project_feasible(y)


# -- optimisation -------------------------------------------------------------------

def _scales(n_frames):
    return np.concatenate([SHARED_SCALE, np.tile(FRAME_SCALE, n_frames)])


def _lr(cfg: FitConfig, it: int):
    if cfg.schedule == "constant" or cfg.max_iters == 1:
        return cfg.step_size
    frac = it / (cfg.max_iters - 1)
    lo = cfg.step_size * cfg.final_fraction
    return lo + 0.5 * (cfg.step_size - lo) * (1.0 + math.cos(math.pi * frac))


class _Descent:
    """Projected Adam in scaled coordinates; can be advanced in chunks."""

    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    def __init__(self, x0, observations, labels, cfg: FitConfig):
        self.obs, self.labels, self.cfg = observations, labels, cfg
        self.kw = dict(n_theta=cfg.n_theta, n_rho=cfg.n_rho, sampling=cfg.sampling)
        self.s = _scales(len(observations))
        self.x = project_feasible(x0)
        self.m = np.zeros_like(self.x)
        self.v = np.zeros_like(self.x)
        self.it = 0
        self.traj = []
        self.best_x, self.best_L = self.x.copy(), math.inf
        self.prev = None
        self.still = 0
        self.converged = False
        self.diverged = False

    @property
    def done(self):
        return self.converged or self.diverged or self.it >= self.cfg.max_iters

    def run(self, n_iters):
        cfg = self.cfg
        stop = min(self.it + n_iters, cfg.max_iters)
        while self.it < stop and not (self.converged or self.diverged):
            L, g, bd = loss_and_gradient(self.x, self.obs, self.labels, cfg.weights, **self.kw)
            self.traj.append((self.it, L, {k: v for k, v in bd.as_dict().items() if k != "total"}))
            if not math.isfinite(L) or not np.all(np.isfinite(g)):
                self.diverged = True
                break
            if L < self.best_L:
                self.best_x, self.best_L = self.x.copy(), L
            if self.prev is not None and abs(self.prev - L) <= cfg.convergence_tol * max(abs(L), 1e-12):
                self.still += 1
                if self.still >= cfg.patience:
                    self.converged = True
                    break
            else:
                self.still = 0
            self.prev = L
            gs = g * self.s
            self.m = self.beta1 * self.m + (1 - self.beta1) * gs
            self.v = self.beta2 * self.v + (1 - self.beta2) * gs * gs
            t = self.it + 1
            mh = self.m / (1 - self.beta1 ** t)
            vh = self.v / (1 - self.beta2 ** t)
            self.x = project_feasible(self.x - _lr(cfg, self.it) * self.s * mh / (np.sqrt(vh) + self.adam_eps))
            self.it += 1
        return self

    @property
    def score(self):
        return self.best_L if math.isfinite(self.best_L) and not self.diverged else math.inf


def optimize(x0, observations, labels: Labels, cfg: FitConfig):
    """One projected descent from ``x0``; returns (best_x, best_loss, trajectory, converged)."""
    d = _Descent(x0, observations, labels, cfg).run(cfg.max_iters)
    return d.best_x, (d.best_L if not d.diverged else math.nan), d.traj, d.converged


def _check_inputs(observations, labels, cfg):
    if not observations:
        raise InvalidParameter("need at least one frame")
    w = cfg.weights
    if w.w_pred2gt > 0 or w.w_gt2pred > 0:
        for n, o in enumerate(observations):
            if len(o.pupil_pixels) == 0 or len(o.iris_pixels) == 0:
                raise InvalidParameter(f"frame {n} has an empty mask but segmentation losses are active")


def fit_sequence(observations, labels: Labels = NO_LABELS, cfg: FitConfig = FitConfig(), x0=None) -> FitReport:
    """Fit one sequence.

    Every restart (the first from the init strategy, the rest from seed-derived
    perturbations of it) runs for ``screen_fraction`` of the iteration budget;
    the lowest-loss one is then continued to ``max_iters``.
    """
    _check_inputs(observations, labels, cfg)
    t0 = time.perf_counter()
    warning = ""
    if x0 is None:
        x0, warning = init_parameters(cfg.init, observations, cfg.seed)
    runs = []
    screen = cfg.max_iters if cfg.restarts == 1 else max(1, int(round(cfg.screen_fraction * cfg.max_iters)))
    for k in range(cfg.restarts):
        start = x0 if k == 0 else _perturb(x0, np.random.default_rng([cfg.seed, 101, k]))
        runs.append(_Descent(start, observations, labels, cfg).run(screen))
        log.debug("restart %d: loss %.6g after %d iterations", k, runs[-1].best_L, runs[-1].it)
    scores = [r.score for r in runs]
    if not any(math.isfinite(s) for s in scores):
        raise FitDiverged("all restarts diverged", {"restarts": list(range(cfg.restarts)),
                                                    "last_losses": [r.traj[-1][1] for r in runs if r.traj]})
    k = int(np.argmin(scores))
    best = runs[k]
    best.run(cfg.max_iters - best.it)
    if best.diverged and not math.isfinite(best.best_L):
        raise FitDiverged("best restart diverged", {"restart": k})
    return FitReport(best.best_x, best.traj, best.converged, time.perf_counter() - t0, best.best_L, k,
                     tuple(l.frame_index for l in labels.gaze), warning)


def choose_labeled_frames(n_frames, label_fraction, seed):
    if not 0 < label_fraction <= 1:
        raise InvalidParameter("label_fraction must be in (0, 1]")
    k = max(1, int(round(label_fraction * n_frames)))
    if k >= n_frames:
        return list(range(n_frames))
    rng = np.random.default_rng([seed, 7])
    return sorted(int(i) for i in rng.choice(n_frames, size=k, replace=False))


def few_shot_fit(observations, all_labels: Labels, label_fraction: float, cfg: FitConfig,
                 pretrained: FitReport | None = None, two_stage: bool = False) -> FitReport:
    """Fit with gaze labels kept on a seeded random subset of frames.

    With ``pretrained`` the descent starts from its parameters (a single start);
    with ``two_stage`` a semantics-only fit is run first to produce that start.
    """
    frames = choose_labeled_frames(len(observations), label_fraction, cfg.seed)
    labels = all_labels.subset(frames)
    if pretrained is None and two_stage:
        stage1 = replace(cfg, weights=replace(cfg.weights, w_gaze=0.0, w_center=0.0))
        pretrained = fit_sequence(observations, NO_LABELS, stage1)
    if pretrained is None:
        return fit_sequence(observations, labels, cfg)
    rep = fit_sequence(observations, labels, replace(cfg, restarts=1), x0=pretrained.params)
    rep.labeled_frames = tuple(frames)
    return rep
