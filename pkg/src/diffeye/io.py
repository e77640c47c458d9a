"""On-disk formats.

* masks: binary PGM (P5), 8-bit, class codes 0/127/255 (background/iris/pupil)
* manifest and fit reports: UTF-8 JSON carrying ``schema_version = 1``
* labels: CSV ``frame,gx,gy,gz`` and ``frame,cx,cy``
* metrics: CSV ``config,gaze3d_deg,gaze2d_deg,miou,center_px``

Floats are written with 17 significant digits so files round-trip exactly.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EyeModelError
from .fitter import FitReport
from .objectives import CenterLabel, GazeLabel, Labels, SemanticObservation
from .params import from_degrees_dict, to_degrees_dict
from .synthdata import CLASS_CODES, Bitmask

SCHEMA_VERSION = 1
GAZE_HEADER = ["frame", "gx", "gy", "gz"]
CENTER_HEADER = ["frame", "cx", "cy"]
METRICS_HEADER = ["config", "gaze3d_deg", "gaze2d_deg", "miou", "center_px"]
FRAME_METRICS_HEADER = ["config", "frame", "gaze3d_deg", "gaze2d_deg", "miou"]
UNIT_TOL = 1e-6


class SchemaError(EyeModelError):
    """A file does not follow its documented format."""


def fmt(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else format(v, ".17g")


# -- PGM ----------------------------------------------------------------------------

def write_pgm(path, mask: Bitmask):
    bad = ~np.isin(mask.data, CLASS_CODES)
    if bad.any():
        raise SchemaError(f"mask contains values outside {CLASS_CODES}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(mask.data, dtype=np.uint8).tobytes())


def read_pgm(path) -> Bitmask:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise SchemaError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise SchemaError(f"{path}: not a binary PGM (P5) file")
    try:
        W, H, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise SchemaError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise SchemaError(f"{path}: expected maxval 255, got {maxval}")
    body = raw[pos:pos + W * H]
    if len(body) != W * H:
        raise SchemaError(f"{path}: expected {W * H} pixel bytes, found {len(body)}")
    data = np.frombuffer(body, dtype=np.uint8).reshape(H, W).copy()
    if not np.isin(data, CLASS_CODES).all():
        raise SchemaError(f"{path}: pixel values outside {CLASS_CODES}")
    return Bitmask(W, H, data)


# -- label CSVs ---------------------------------------------------------------------

def write_gaze_csv(path, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAZE_HEADER)
        for l in labels:
            w.writerow([l.frame_index, *map(fmt, l.g)])


def write_center_csv(path, centers):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CENTER_HEADER)
        for c in centers:
            w.writerow([c.frame_index, *map(fmt, c.c)])


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != header:
        raise SchemaError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


def read_gaze_csv(path):
    out = []
    for r in _read_rows(path, GAZE_HEADER):
        g = np.array([float(v) for v in r[1:4]])
        if abs(np.linalg.norm(g) - 1.0) > UNIT_TOL:
            raise SchemaError(f"{path}: gaze label of frame {r[0]} is not unit norm")
        out.append(GazeLabel(g / np.linalg.norm(g), int(r[0])))
    return out


def read_center_csv(path):
    return [CenterLabel(np.array([float(r[1]), float(r[2])]), int(r[0])) for r in _read_rows(path, CENTER_HEADER)]


# -- manifest -----------------------------------------------------------------------

@dataclass
class Manifest:
    width: int
    height: int
    masks: list
    labels: Labels
    ground_truth: np.ndarray | None = None
    root: Path = Path(".")
    extra: dict = field(default_factory=dict)

    @property
    def observations(self):
        return [SemanticObservation.from_mask(m) for m in self.masks]

    @property
    def n_frames(self):
        return len(self.masks)

    def gt_gazes(self):
        """Ground-truth gaze per frame, from the parameter block or complete labels."""
        if self.ground_truth is not None:
            from .metrics import gazes_of
            g = gazes_of(self.ground_truth)
            return g / np.linalg.norm(g, axis=1, keepdims=True)
        by_frame = {l.frame_index: l.g for l in self.labels.gaze}
        if len(by_frame) == self.n_frames:
            return np.array([by_frame[k] for k in range(self.n_frames)])
        return None

    def gt_center(self):
        if self.ground_truth is not None:
            from .metrics import center_of
            return center_of(self.ground_truth, self.width, self.height)
        if self.labels.centers:
            return np.mean([c.c for c in self.labels.centers], axis=0)
        return None


def write_manifest(path, width, height, mask_files, labels: Labels, ground_truth=None, extra=None,
                   gaze_csv=None, center_csv=None):
    gaze = {l.frame_index: l.g for l in labels.gaze}
    cent = {c.frame_index: c.c for c in labels.centers}
    frames = []
    for k, mf in enumerate(mask_files):
        e = {"mask": str(mf)}
        if k in gaze:
            e["gaze"] = [float(v) for v in gaze[k]]
        if k in cent:
            e["center"] = [float(v) for v in cent[k]]
        frames.append(e)
    doc = {"schema_version": SCHEMA_VERSION, "width": int(width), "height": int(height), "frames": frames}
    if gaze_csv:
        doc["gaze_labels_csv"] = str(gaze_csv)
    if center_csv:
        doc["center_labels_csv"] = str(center_csv)
    if ground_truth is not None:
        doc["ground_truth"] = to_degrees_dict(ground_truth)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _load_json(path, what):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: {what} must carry schema_version {SCHEMA_VERSION}")
    return doc


def read_manifest(path) -> Manifest:
    path = Path(path)
    doc = _load_json(path, "manifest")
    root = path.parent
    try:
        W, H = int(doc["width"]), int(doc["height"])
        entries = doc["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: missing width/height/frames") from exc
    if not entries:
        raise SchemaError(f"{path}: manifest lists no frames")
    masks, gaze, cent = [], [], []
    for k, e in enumerate(entries):
        mf = root / e["mask"]
        if not mf.exists():
            raise FileNotFoundError(f"mask file {mf} referenced by {path} does not exist")
        m = read_pgm(mf)
        if (m.width, m.height) != (W, H):
            raise SchemaError(f"{mf}: size {m.width}x{m.height} does not match manifest {W}x{H}")
        masks.append(m)
        if e.get("gaze") is not None:
            g = np.asarray(e["gaze"], float)
            if g.shape != (3,) or abs(np.linalg.norm(g) - 1.0) > UNIT_TOL:
                raise SchemaError(f"{path}: gaze label of frame {k} must be a unit 3-vector")
            gaze.append(GazeLabel(g / np.linalg.norm(g), k))
        if e.get("center") is not None:
            c = np.asarray(e["center"], float)
            if c.shape != (2,):
                raise SchemaError(f"{path}: center label of frame {k} must have 2 entries")
            cent.append(CenterLabel(c, k))
    if not gaze and doc.get("gaze_labels_csv"):
        gaze = read_gaze_csv(root / doc["gaze_labels_csv"])
    if not cent and doc.get("center_labels_csv"):
        cent = read_center_csv(root / doc["center_labels_csv"])
    for l in gaze:
        if not 0 <= l.frame_index < len(masks):
            raise SchemaError(f"{path}: gaze label for missing frame {l.frame_index}")
    gt = None
    if doc.get("ground_truth") is not None:
        try:
            gt = from_degrees_dict(doc["ground_truth"])
        except (KeyError, TypeError, ValueError, EyeModelError) as exc:
            raise SchemaError(f"{path}: bad ground_truth block ({exc})") from exc
        if len(doc["ground_truth"]["frames"]) != len(masks):
            raise SchemaError(f"{path}: ground_truth frame count does not match")
    known = {"schema_version", "width", "height", "frames", "ground_truth", "gaze_labels_csv", "center_labels_csv"}
    extra = {k: v for k, v in doc.items() if k not in known}
    return Manifest(W, H, masks, Labels(gaze, cent), gt, root, extra)


# -- fit report ---------------------------------------------------------------------

def report_to_dict(rep: FitReport, width, height, preset=None, weights=None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit_report",
        "width": int(width),
        "height": int(height),
        "preset": preset,
        "weights": weights,
        "params": to_degrees_dict(rep.params),
        # exact internal vector (radians); degrees above are for people and may differ in the last ulp
        "param_vector": [float(v) for v in rep.params],
        "gazes": [[float(v) for v in g] for g in rep.gazes],
        "final_loss": float(rep.final_loss),
        "converged": bool(rep.converged),
        "restart": int(rep.restart),
        "labeled_frames": [int(k) for k in rep.labeled_frames],
        "init_warning": rep.init_warning,
        "trajectory": [{"iteration": int(i), "total": float(L), **{k: float(v) for k, v in terms.items()}}
                       for i, L, terms in rep.trajectory],
        "metrics": rep.metrics,
        "wall_time": float(rep.wall_time),
    }


def _nan_safe(o):
    if isinstance(o, float) and math.isnan(o):
        return None
    if isinstance(o, dict):
        return {k: _nan_safe(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_nan_safe(v) for v in o]
    return o


def write_report(path, rep: FitReport, width, height, preset=None, weights=None):
    doc = _nan_safe(report_to_dict(rep, width, height, preset, weights))
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _nan_restore(o):
    if o is None:
        return math.nan
    if isinstance(o, dict):
        return {k: _nan_restore(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_nan_restore(v) for v in o]
    return o


def read_report(path):
    """Return ``(FitReport, document)``."""
    doc = _load_json(path, "fit report")
    if doc.get("kind") != "fit_report":
        raise SchemaError(f"{path}: not a fit report")
    try:
        x = from_degrees_dict(doc["params"])
        if doc.get("param_vector") is not None:
            exact = np.asarray(doc["param_vector"], float)
            if exact.shape != x.shape or not np.allclose(exact, x, rtol=1e-9, atol=1e-12):
                raise SchemaError(f"{path}: param_vector disagrees with params")
            x = exact
        traj = [(t["iteration"], t["total"], {k: v for k, v in t.items() if k not in ("iteration", "total")})
                for t in doc["trajectory"]]
        metrics = _nan_restore(doc["metrics"]) if doc.get("metrics") is not None else None
        rep = FitReport(x, traj, doc["converged"], doc["wall_time"], doc["final_loss"], doc["restart"],
                        tuple(doc["labeled_frames"]), doc.get("init_warning", ""), metrics)
    except (KeyError, TypeError, ValueError, EyeModelError) as exc:
        raise SchemaError(f"{path}: malformed fit report ({exc})") from exc
    return rep, doc


# -- metrics CSV --------------------------------------------------------------------

def write_metrics(path, rows):
    """``rows``: iterable of (config name, metrics dict as produced by ``metrics.evaluate``)."""
    path = Path(path)
    rows = list(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for name, m in rows:
            w.writerow([name] + [fmt(m[k]) for k in METRICS_HEADER[1:]])
    detail = path.with_name(path.stem + "_frames" + path.suffix)
    with open(detail, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_METRICS_HEADER)
        for name, m in rows:
            for fr in m.get("per_frame", []):
                w.writerow([name, fr["frame"], fmt(fr["gaze3d_deg"]), fmt(fr["gaze2d_deg"]), fmt(fr["miou"])])
    return detail


def read_metrics(path):
    out = []
    for r in _read_rows(path, METRICS_HEADER):
        out.append((r[0], {k: float(v) for k, v in zip(METRICS_HEADER[1:], r[1:])}))
    return out
