import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffeye import io
from diffeye.fitter import FitReport
from diffeye.objectives import CenterLabel, GazeLabel, Labels
from diffeye.params import (
    check_constraints, from_degrees_dict, n_frames_of, names, pack, to_degrees_dict, unpack,
)
from diffeye.synthdata import IRIS, PUPIL, Bitmask

codes = st.sampled_from([0, IRIS, PUPIL])


@st.composite
def bitmasks(draw):
    w, h = draw(st.integers(1, 12)), draw(st.integers(1, 12))
    data = np.array(draw(st.lists(codes, min_size=w * h, max_size=w * h)), np.uint8).reshape(h, w)
    return Bitmask(w, h, data)


@st.composite
def param_vectors(draw):
    n = draw(st.integers(1, 4))
    r_e = draw(st.floats(5, 15))
    r_i = draw(st.floats(0.2, 0.9)) * r_e
    x = [r_e, r_i, draw(st.floats(-5, 5)), draw(st.floats(-5, 5)), draw(st.floats(5, 50)), draw(st.floats(20, 400))]
    for _ in range(n):
        x += [draw(st.floats(-1.39, 1.39)), draw(st.floats(-1.39, 1.39)), draw(st.floats(0.05, 0.95)) * r_i]
    return np.array(x)


@given(bitmasks())
@settings(max_examples=60)
def test_pgm_round_trip(tmp_path_factory, m):
    p = tmp_path_factory.mktemp("pgm") / "m.pgm"
    io.write_pgm(p, m)
    assert p.read_bytes().startswith(f"P5\n{m.width} {m.height}\n255\n".encode())
    assert io.read_pgm(p) == m


def test_pgm_with_comment_and_errors(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
    m = io.read_pgm(p)
    assert m.width == 2 and list(m.data[0]) == [0, 255]
    p.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 3]))
    with pytest.raises(io.SchemaError):
        io.read_pgm(p)
    p.write_bytes(b"P2\n2 1\n255\n0 0")
    with pytest.raises(io.SchemaError):
        io.read_pgm(p)
    with pytest.raises(io.SchemaError):
        io.write_pgm(p, Bitmask(1, 1, np.array([[5]])))


def test_label_csv_round_trip(tmp_path):
    g = np.array([0.6, 0.0, -0.8])
    gaze = [GazeLabel(g, 0), GazeLabel(g / np.linalg.norm(g) * 1.0, 3)]
    cent = [CenterLabel([64.25, 63.1], 0), CenterLabel([1 / 3, 2 / 3], 1)]
    io.write_gaze_csv(tmp_path / "g.csv", gaze)
    io.write_center_csv(tmp_path / "c.csv", cent)
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "frame,gx,gy,gz"
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "frame,cx,cy"
    back = io.read_gaze_csv(tmp_path / "g.csv")
    assert [l.frame_index for l in back] == [0, 3]
    np.testing.assert_array_equal(back[0].g, g)
    cb = io.read_center_csv(tmp_path / "c.csv")
    assert cb[1].c.tolist() == [1 / 3, 2 / 3]


@given(param_vectors())
def test_parameter_layout_and_degrees(x):
    n = n_frames_of(x)
    assert len(names(n)) == len(x) == 6 + 3 * n
    shared, frames = unpack(x)
    assert pack(shared, frames).tobytes() == x.tobytes()
    back = from_degrees_dict(json.loads(json.dumps(to_degrees_dict(x))))
    np.testing.assert_allclose(back, x, rtol=1e-15, atol=1e-15)
    check_constraints(back)


def _write_seq(tmp_path, seq):
    files = []
    (tmp_path / "masks").mkdir(exist_ok=True)
    for k, m in enumerate(seq.masks):
        io.write_pgm(tmp_path / "masks" / f"{k}.pgm", m)
        files.append(f"masks/{k}.pgm")
    io.write_manifest(tmp_path / "manifest.json", 64, 64, files, seq.labels, seq.params)
    return tmp_path / "manifest.json"


def test_manifest_round_trip(tmp_path, small_seq):
    man = io.read_manifest(_write_seq(tmp_path, small_seq))
    assert man.n_frames == 3 and (man.width, man.height) == (64, 64)
    assert all(a == b for a, b in zip(man.masks, small_seq.masks))
    np.testing.assert_array_equal([l.g for l in man.labels.gaze], small_seq.gazes)
    np.testing.assert_allclose(man.ground_truth, small_seq.params, rtol=1e-15)
    np.testing.assert_allclose(man.gt_gazes(), small_seq.gazes, atol=1e-15)
    np.testing.assert_allclose(man.gt_center(), small_seq.center, atol=1e-12)


def test_manifest_labels_from_csv(tmp_path, small_seq):
    (tmp_path / "masks").mkdir()
    files = []
    for k, m in enumerate(small_seq.masks):
        io.write_pgm(tmp_path / "masks" / f"{k}.pgm", m)
        files.append(f"masks/{k}.pgm")
    io.write_gaze_csv(tmp_path / "gaze.csv", small_seq.labels.gaze)
    io.write_manifest(tmp_path / "m.json", 64, 64, files, Labels(), gaze_csv="gaze.csv")
    man = io.read_manifest(tmp_path / "m.json")
    assert len(man.labels.gaze) == 3 and man.ground_truth is None
    np.testing.assert_array_equal(man.gt_gazes(), small_seq.gazes)


@pytest.mark.parametrize("mutate, exc", [
    (lambda d: d.update(schema_version=2), io.SchemaError),
    (lambda d: d["frames"][0].update(gaze=[0, 0, 2.0]), io.SchemaError),
    (lambda d: d["frames"][0].update(mask="missing.pgm"), FileNotFoundError),
    (lambda d: d.update(width=65), io.SchemaError),
    (lambda d: d.update(frames=[]), io.SchemaError),
    (lambda d: d["frames"][1].update(center=[1.0]), io.SchemaError),
])
def test_manifest_validation(tmp_path, small_seq, mutate, exc):
    p = _write_seq(tmp_path, small_seq)
    d = json.loads(p.read_text())
    mutate(d)
    p.write_text(json.dumps(d))
    with pytest.raises(exc):
        io.read_manifest(p)


def test_manifest_not_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(io.SchemaError):
        io.read_manifest(p)


def _report():
    x = np.array([12.0, 6.1, 0.5, -0.25, 33.0, 120.0, 0.1, -0.2, 2.0, 0.3, 0.05, 1.9])
    metrics = {"gaze3d_deg": 0.5, "gaze2d_deg": math.nan, "miou": 0.97, "center_px": 0.1,
               "per_frame": [{"frame": 0, "gaze3d_deg": 0.4, "gaze2d_deg": math.nan, "miou": 0.96}]}
    traj = [(0, 3.0, {"seg": 3.0, "gaze": 0.0}), (1, 2.5, {"seg": 2.4, "gaze": 0.1})]
    return FitReport(x, traj, True, 1.25, 2.5, 1, (0, 1), "", metrics)


def test_report_round_trip(tmp_path):
    rep = _report()
    io.write_report(tmp_path / "r.json", rep, 128, 128, "sem+gaze", {"w_gaze": 20.0})
    back, doc = io.read_report(tmp_path / "r.json")
    assert back.params.tobytes() == rep.params.tobytes()
    assert back.trajectory == rep.trajectory
    assert (back.converged, back.final_loss, back.restart, back.labeled_frames) == (True, 2.5, 1, (0, 1))
    assert math.isnan(back.metrics["gaze2d_deg"]) and back.metrics["miou"] == 0.97
    assert doc["preset"] == "sem+gaze" and doc["width"] == 128
    np.testing.assert_allclose(doc["gazes"], rep.gazes, atol=1e-15)
    # saving the loaded report reproduces the file
    io.write_report(tmp_path / "r2.json", back, 128, 128, "sem+gaze", {"w_gaze": 20.0})
    assert (tmp_path / "r.json").read_text() == (tmp_path / "r2.json").read_text()


def test_metrics_round_trip(tmp_path):
    rows = [("sem", _report().metrics), ("sem+gaze", {**_report().metrics, "miou": 1 / 3})]
    detail = io.write_metrics(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "config,gaze3d_deg,gaze2d_deg,miou,center_px"
    back = io.read_metrics(tmp_path / "m.csv")
    assert [r[0] for r in back] == ["sem", "sem+gaze"]
    assert back[1][1]["miou"] == 1 / 3
    assert math.isnan(back[0][1]["gaze2d_deg"])
    assert len(detail.read_text().splitlines()) == 3
