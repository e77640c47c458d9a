"""Preset ablation on noiseless synthetic sequences.

Fits every sequence with each loss preset and writes one metrics row per
(sequence, preset) plus a per-preset summary to stdout.

    python3 scripts/ablation.py --sequences 20 --out ablation.csv
"""
import argparse
import csv
import time

import numpy as np

from diffeye import io
from diffeye.fitter import PRESETS, FitConfig, fit_sequence
from diffeye.metrics import evaluate
from diffeye.objectives import Labels
from diffeye.synthdata import SynthConfig, generate_sequence

DEFAULT_PRESETS = ("sem", "sem+gaze", "sem+gaze+cent")


def labels_for(preset, labels):
    w = PRESETS[preset]
    return Labels(labels.gaze if w.w_gaze else [], labels.centers if w.w_center else [])


def run(n_sequences=20, presets=DEFAULT_PRESETS, n_frames=4, base_seed=0, progress=None):
    """Return rows of (sequence seed, preset, metrics, seconds)."""
    rows = []
    for s in range(base_seed, base_seed + n_sequences):
        seq = generate_sequence(SynthConfig(n_frames=n_frames, seed=s))
        for p in presets:
            t0 = time.perf_counter()
            rep = fit_sequence(seq.observations, labels_for(p, seq.labels), FitConfig(weights=PRESETS[p]))
            m = evaluate(rep.params, seq.clean_masks, seq.gazes, seq.center)
            rows.append((s, p, m, time.perf_counter() - t0))
            if progress:
                progress(rows[-1])
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sequences", type=int, default=20)
    ap.add_argument("--frames", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--presets", default=",".join(DEFAULT_PRESETS))
    ap.add_argument("--out", default="ablation.csv")
    a = ap.parse_args()
    presets = a.presets.split(",")
    show = lambda r: print(f"seq {r[0]:3d} {r[1]:14s} g3 {r[2]['gaze3d_deg']:8.3f}  miou {r[2]['miou']:.4f}  "
                           f"cent {r[2]['center_px']:7.3f}  ({r[3]:.1f} s)", flush=True)
    rows = run(a.sequences, presets, a.frames, a.seed, show)
    with open(a.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", *io.METRICS_HEADER])
        for s, p, m, _ in rows:
            w.writerow([s, p] + [io.fmt(m[k]) for k in io.METRICS_HEADER[1:]])
    for p in presets:
        ms = [r[2] for r in rows if r[1] == p]
        med = {k: np.median([m[k] for m in ms]) for k in ("gaze3d_deg", "miou", "center_px")}
        print(f"{p:14s} median g3 {med['gaze3d_deg']:.3f} deg  miou {med['miou']:.4f}  cent {med['center_px']:.3f} px")


if __name__ == "__main__":
    main()
