"""Randomised certification of the analytic gradient against central differences."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .diffengine import finite_difference_gradient, loss_and_gradient, relative_error
from .errors import BoundaryTooClose
from .objectives import LossWeights
from .params import frame_block, n_frames_of, names, project_feasible
from .synthdata import SynthConfig, generate_sequence

# Relative errors use max(|a|, |n|, FLOOR) as denominator: central differences with
# eps = 1e-6 carry ~1e-9 absolute round-off, so 1e-5 relative accuracy can only be
# asked of components larger than ~1e-4.
REL_FLOOR = 1e-4


@dataclass(frozen=True)
class GradcheckConfig:
    n_configs: int = 100
    tolerance: float = 1e-5
    eps: float = 1e-6
    seed: int = 0
    n_frames: int = 4
    size: int = 64
    required_pass_rate: float = 0.95


@dataclass
class ConfigResult:
    index: int
    max_rel_error: float
    worst_param: str
    n_smooth: int
    n_params: int
    passed: bool
    sampling: str


@dataclass
class GradcheckSummary:
    results: list = field(default_factory=list)
    wall_time: float = 0.0
    tolerance: float = 1e-5
    required_pass_rate: float = 0.95

    @property
    def pass_rate(self):
        return sum(r.passed for r in self.results) / max(len(self.results), 1)

    @property
    def ok(self):
        return self.pass_rate >= self.required_pass_rate

    def worst(self):
        return max(self.results, key=lambda r: r.max_rel_error)


def random_problem(i: int, cfg: GradcheckConfig):
    """One random (params, observations, labels, weights, discretisation) instance."""
    rng = np.random.default_rng([cfg.seed, 31, i])
    f_lo = 0.7 * cfg.size
    seq = generate_sequence(SynthConfig(
        n_frames=cfg.n_frames, width=cfg.size, height=cfg.size, f_range=(f_lo, 1.05 * cfg.size),
        max_angle_deg=30.0, seed=int(rng.integers(2**31)),
    ))
    x = seq.params.copy()
    x[:6] += rng.normal(0, [0.3, 0.2, 0.5, 0.5, 1.0, 3.0])
    fb = frame_block(x)
    fb[:, :2] += rng.normal(0, 0.08, fb[:, :2].shape)
    fb[:, 2] += rng.normal(0, 0.15, len(fb))
    x = project_feasible(x)
    # Labels on a random nonempty subset of frames.
    keep = rng.random(cfg.n_frames) < 0.7
    keep[rng.integers(cfg.n_frames)] = True
    frames = [k for k in range(cfg.n_frames) if keep[k]]
    labels = seq.labels.subset(frames)
    weights = LossWeights(float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 2)),
                          float(rng.uniform(1, 20)), float(rng.uniform(0.05, 1)), bool(rng.random() < 0.5))
    disc = dict(n_theta=int(rng.integers(24, 73)), n_rho=int(rng.integers(3, 9)),
                sampling="rims" if i % 2 == 0 else "centered")
    return x, seq.observations, labels, weights, disc


def check_one(i: int, cfg: GradcheckConfig) -> ConfigResult:
    x, obs, labels, weights, disc = random_problem(i, cfg)
    _, grad, _ = loss_and_gradient(x, obs, labels, weights, **disc)
    try:
        fd = finite_difference_gradient(x, obs, labels, weights, eps=cfg.eps, **disc)
    except BoundaryTooClose:
        return ConfigResult(i, np.inf, "<boundary>", 0, len(x), False, disc["sampling"])
    rel = relative_error(grad, fd.gradient, REL_FLOOR)
    rel = np.where(fd.smooth, rel, 0.0)
    j = int(np.argmax(rel))
    n_smooth = int(fd.smooth.sum())
    worst = float(rel[j])
    passed = n_smooth > 0 and worst <= cfg.tolerance
    return ConfigResult(i, worst, names(n_frames_of(x))[j], n_smooth, len(x), passed, disc["sampling"])


def run_gradcheck(cfg: GradcheckConfig = GradcheckConfig(), progress=None) -> GradcheckSummary:
    t0 = time.perf_counter()
    out = GradcheckSummary(tolerance=cfg.tolerance, required_pass_rate=cfg.required_pass_rate)
    for i in range(cfg.n_configs):
        r = check_one(i, cfg)
        out.results.append(r)
        if progress:
            progress(r)
    out.wall_time = time.perf_counter() - t0
    return out


__all__ = ["GradcheckConfig", "GradcheckSummary", "ConfigResult", "run_gradcheck", "random_problem",
           "check_one", "REL_FLOOR"]
