"""Command-line interface: ``diffeye {synth,fit,fewshot,gradcheck,eval}``.

Exit codes: 0 success, 2 file I/O error, 3 schema error or missing labels,
4 optimisation diverged, 5 gradient check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import EyeModelError, FitDiverged
from .fitter import PRESETS, FitConfig, InitStrategy, few_shot_fit, fit_sequence
from .gradcheck import GradcheckConfig, run_gradcheck
from .metrics import evaluate
from .objectives import NO_LABELS, Labels, LossWeights
from .synthdata import SynthConfig, generate_sequence

EXIT_OK, EXIT_IO, EXIT_SCHEMA, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5

log = logging.getLogger("diffeye")

# Few-shot protocol: a semantics-only pretraining fit, then a fine-tune from it
# with the labelled subset; the baseline fits gaze labels alone from defaults.
PRETRAIN = FitConfig(weights=PRESETS["sem"], max_iters=300)
FINETUNE = FitConfig(weights=PRESETS["sem+gaze"], max_iters=150, step_size=0.05)
SCRATCH = FitConfig(weights=PRESETS["gaze"], max_iters=300, init=InitStrategy("defaults"))


class UsageError(EyeModelError):
    pass


def _weights(args):
    if args.weights:
        try:
            vals = [float(v) for v in args.weights.split(",")]
        except ValueError as exc:
            raise UsageError(f"--weights expects four comma-separated numbers, got {args.weights!r}") from exc
        if len(vals) != 4 or min(vals) < 0:
            raise UsageError("--weights expects four nonnegative numbers: p2g,g2p,gaze,center")
        return LossWeights(*vals)
    return PRESETS[args.preset]


def _labels_for(weights: LossWeights, labels: Labels) -> Labels:
    if weights.w_gaze > 0 and not labels.gaze:
        raise UsageError("the selected loss uses gaze labels but the manifest provides none")
    if weights.w_center > 0 and not labels.centers:
        raise UsageError("the selected loss uses eyeball-centre labels but the manifest provides none")
    return Labels(labels.gaze if weights.w_gaze > 0 else (), labels.centers if weights.w_center > 0 else ())


def _fit_config(args, weights):
    cfg = FitConfig(weights=weights, seed=args.seed)
    if args.iters is not None:
        cfg = replace(cfg, max_iters=args.iters)
    if args.step is not None:
        cfg = replace(cfg, step_size=args.step)
    if getattr(args, "restarts", None) is not None:
        cfg = replace(cfg, restarts=args.restarts)
    return cfg


def _evaluate(x, man: io.Manifest):
    return evaluate(x, man.masks, man.gt_gazes(), man.gt_center(), size=(man.width, man.height))


# -- subcommands --------------------------------------------------------------------

def cmd_synth(args):
    cfg = SynthConfig()
    if args.config:
        cfg = SynthConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.frames is not None:
        cfg = replace(cfg, n_frames=args.frames)
    seq = generate_sequence(cfg)
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    files = []
    for k, m in enumerate(seq.masks):
        rel = Path("masks") / f"frame_{k:04d}.pgm"
        io.write_pgm(out / rel, m)
        files.append(rel.as_posix())
    io.write_gaze_csv(out / "gaze.csv", seq.labels.gaze)
    io.write_center_csv(out / "centers.csv", seq.labels.centers)
    io.write_manifest(out / "manifest.json", cfg.width, cfg.height, files, seq.labels, seq.params,
                      extra={"synth_config": cfg.to_dict()}, gaze_csv="gaze.csv", center_csv="centers.csv")
    print(f"wrote {len(files)} frames to {out}")
    return EXIT_OK


def cmd_fit(args):
    man = io.read_manifest(args.manifest)
    weights = _weights(args)
    labels = _labels_for(weights, man.labels)
    cfg = _fit_config(args, weights)
    rep = fit_sequence(man.observations, labels, cfg)
    rep.metrics = _evaluate(rep.params, man)
    name = args.preset if not args.weights else "custom"
    io.write_report(args.out, rep, man.width, man.height, name, weights.__dict__)
    if args.metrics:
        io.write_metrics(args.metrics, [(name, rep.metrics)])
    m = rep.metrics
    print(f"{name}: loss {rep.final_loss:.6g}  gaze3d {m['gaze3d_deg']:.4f} deg  gaze2d {m['gaze2d_deg']:.4f} deg  "
          f"mIoU {m['miou']:.4f}  center {m['center_px']:.4f} px")
    return EXIT_OK


def cmd_eval(args):
    man = io.read_manifest(args.manifest)
    rows = []
    if args.ground_truth:
        if man.ground_truth is None:
            raise UsageError("manifest has no ground_truth block")
        rows.append(("ground_truth", _evaluate(man.ground_truth, man)))
    for path in args.reports:
        rep, doc = io.read_report(path)
        if (doc.get("width"), doc.get("height")) != (man.width, man.height):
            raise io.SchemaError(f"{path}: report image size {doc.get('width')}x{doc.get('height')} does not "
                                 f"match the manifest's {man.width}x{man.height}")
        if rep.params.size != 6 + 3 * man.n_frames:
            raise io.SchemaError(f"{path}: report has a different frame count than the manifest")
        rows.append((doc.get("preset") or Path(path).stem, _evaluate(rep.params, man)))
    if not rows:
        raise UsageError("nothing to evaluate: pass fit reports and/or --ground-truth")
    io.write_metrics(args.out, rows)
    for name, m in rows:
        print(f"{name}: gaze3d {m['gaze3d_deg']:.4f}  gaze2d {m['gaze2d_deg']:.4f}  mIoU {m['miou']:.4f}  "
              f"center {m['center_px']:.4f}")
    return EXIT_OK


def _cdf_rows(errors):
    e = np.sort(np.asarray(errors, float))
    return [(float(v), (i + 1) / len(e)) for i, v in enumerate(e)]


def cmd_fewshot(args):
    man = io.read_manifest(args.manifest)
    if not man.labels.gaze:
        raise UsageError("few-shot evaluation needs gaze labels in the manifest")
    gt = man.gt_gazes()
    if gt is None:
        raise UsageError("few-shot evaluation needs ground-truth gaze for every frame")
    try:
        fractions = [float(v) for v in args.fractions.split(",")]
        seeds = [int(v) for v in args.seeds.split(",")]
    except ValueError as exc:
        raise UsageError("--fractions/--seeds must be comma-separated numbers") from exc
    obs = man.observations
    pre_cfg = replace(PRETRAIN, seed=args.seed)
    fine, scratch = FINETUNE, SCRATCH
    if args.iters is not None:
        fine, scratch = replace(fine, max_iters=args.iters), replace(scratch, max_iters=args.iters)
    pre = fit_sequence(obs, NO_LABELS, pre_cfg)
    log.info("pretraining loss %.6g", pre.final_loss)

    size = (man.width, man.height)
    summary, per_frame = [], {"pretrained": [], "scratch": []}
    for frac in fractions:
        for s in seeds:
            for variant in ("pretrained", "scratch"):
                if variant == "pretrained":
                    rep = few_shot_fit(obs, man.labels, frac, replace(fine, seed=s), pretrained=pre)
                else:
                    rep = few_shot_fit(obs, man.labels, frac, replace(scratch, seed=s))
                m = evaluate(rep.params, None, gt, None, size=size)
                summary.append((frac, s, variant, m["gaze3d_deg"], len(rep.labeled_frames)))
                per_frame[variant].extend((frac, s, fr["gaze3d_deg"]) for fr in m["per_frame"])
                print(f"fraction {frac:g} seed {s} {variant}: {m['gaze3d_deg']:.4f} deg "
                      f"({len(rep.labeled_frames)} labelled frames)", flush=True)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "seed", "variant", "n_labeled", "gaze3d_deg"])
        for frac, s, variant, err, k in summary:
            w.writerow([io.fmt(frac), s, variant, k, io.fmt(err)])
    for variant, rows in per_frame.items():
        path = out.with_name(f"{out.stem}_cdf_{variant}{out.suffix}")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fraction", "error_deg", "cumulative_fraction"])
            for frac in fractions:
                for err, c in _cdf_rows([e for f, _, e in rows if f == frac]):
                    w.writerow([io.fmt(frac), io.fmt(err), io.fmt(c)])
    for frac in fractions:
        med = {v: float(np.median([e for f, _, vv, e, _ in summary if f == frac and vv == v]))
               for v in ("pretrained", "scratch")}
        print(f"fraction {frac:g}: median pretrained {med['pretrained']:.4f} deg, scratch {med['scratch']:.4f} deg")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = GradcheckConfig(n_configs=args.configs, tolerance=args.tol, seed=args.seed)

    def progress(r):
        if args.verbose:
            print(f"config {r.index:3d}: max rel err {r.max_rel_error:.3e} ({r.worst_param}, "
                  f"{r.n_smooth}/{r.n_params} smooth) {'ok' if r.passed else 'FAIL'}")

    s = run_gradcheck(cfg, progress)
    w = s.worst()
    n_pass = sum(r.passed for r in s.results)
    print(f"gradcheck: {n_pass}/{len(s.results)} configurations within {cfg.tolerance:g} "
          f"(pass rate {s.pass_rate:.2%}, required {cfg.required_pass_rate:.0%})")
    print(f"worst: config {w.index}, parameter {w.worst_param}, relative error {w.max_rel_error:.3e}")
    return EXIT_OK if s.ok else EXIT_GRADCHECK


# -- parser -------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="diffeye", description="Differentiable eye-model fitting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic sequence to disk")
    s.add_argument("--config", help="JSON file with SynthConfig fields")
    s.add_argument("--seed", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    def fit_opts(q):
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--iters", type=int)
        q.add_argument("--step", type=float)

    f = sub.add_parser("fit", help="fit a sequence")
    f.add_argument("manifest")
    f.add_argument("--preset", choices=sorted(PRESETS), default="sem+gaze")
    f.add_argument("--weights", help="p2g,g2p,gaze,center (overrides --preset)")
    f.add_argument("--restarts", type=int)
    f.add_argument("--out", required=True, help="fit report JSON")
    f.add_argument("--metrics", help="also write a metrics CSV")
    fit_opts(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="evaluate saved fit reports against a manifest")
    e.add_argument("manifest")
    e.add_argument("reports", nargs="*")
    e.add_argument("--ground-truth", action="store_true", help="also evaluate the manifest's ground-truth block")
    e.add_argument("--out", required=True, help="metrics CSV")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("fewshot", help="label-fraction sweep, pretrained vs. scratch")
    w.add_argument("manifest")
    w.add_argument("--fractions", default="0.05,0.25,1.0")
    w.add_argument("--seeds", default="0,1,2,3,4")
    w.add_argument("--out", required=True, help="summary CSV; CDF files are written next to it")
    fit_opts(w)
    w.set_defaults(func=cmd_fewshot)

    g = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    g.add_argument("--configs", type=int, default=100)
    g.add_argument("--tol", type=float, default=1e-5)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FitDiverged as exc:
        print(f"error: optimisation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (EyeModelError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
