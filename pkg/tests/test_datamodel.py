import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from liftpose.calib import CalibrationSample, PolySurface
from liftpose.datamodel import (
    CameraRig,
    Config,
    Detection2D,
    Pose3DFrame,
    RunConfig,
    Sequence3D,
    SideCamera,
    config_from_dict,
    dump_config,
    emit_calibration_samples,
    emit_detections,
    emit_sequence,
    load_config,
    parse_calibration_samples,
    parse_config,
    parse_detections,
    parse_sequence,
)
from liftpose.errors import ConfigError, ParseError, ValidationError


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_detections_parse_sorted(tmp_path):
    p = write(
        tmp_path,
        "d.csv",
        "frame,camera,keypoint,u,v,confidence\n"
        "1,side0,nose,1.5,2.5,0.99\n"
        "0,side0,nose,1,2,0.5\n"
        "0,bottom,nose,3,4,1\n",
    )
    dets = parse_detections(p)
    assert [d.key() for d in dets] == [(0, "bottom", "nose"), (0, "side0", "nose"), (1, "side0", "nose")]
    assert dets[2].u_px == 1.5 and dets[2].confidence == 0.99


@pytest.mark.parametrize(
    "row, line, field",
    [
        ("0,side0,nose,abc,2,0.9", 2, "u"),
        ("0,side0,nose,1,2,nan", 2, "confidence"),
        ("x,side0,nose,1,2,0.9", 2, "frame"),
        ("0,side0,nose,1,2", 2, None),
    ],
)
def test_detections_parse_errors_carry_line(tmp_path, row, line, field):
    p = write(tmp_path, "d.csv", f"frame,camera,keypoint,u,v,confidence\n{row}\n")
    with pytest.raises(ParseError) as exc:
        parse_detections(p)
    assert exc.value.line == line
    assert exc.value.field == field


def test_detections_confidence_range_and_duplicates(tmp_path):
    p = write(tmp_path, "a.csv", "frame,camera,keypoint,u,v,confidence\n0,s,n,1,2,1.5\n")
    with pytest.raises(ValidationError, match="line 2"):
        parse_detections(p)
    p = write(tmp_path, "b.csv", "frame,camera,keypoint,u,v,confidence\n0,s,n,1,2,0.5\n0,s,n,1,2,0.6\n")
    with pytest.raises(ValidationError, match="duplicate"):
        parse_detections(p)


def test_detections_bad_header(tmp_path):
    p = write(tmp_path, "d.csv", "frame,cam,keypoint,u,v,confidence\n")
    with pytest.raises(ParseError) as exc:
        parse_detections(p)
    assert exc.value.line == 1


names = st.text(alphabet="abcdefgh_", min_size=1, max_size=6)
finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@given(
    st.lists(
        st.tuples(st.integers(0, 50), names, names, finite, finite, st.floats(0, 1)),
        min_size=1,
        max_size=30,
        unique_by=lambda r: (r[0], r[1], r[2]),
    )
)
def test_detections_round_trip(tmp_path_factory, rows):
    dets = [Detection2D(*r) for r in rows]
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    emit_detections(dets, path)
    assert parse_detections(path) == sorted(dets, key=Detection2D.key)


def test_sequence_round_trip_and_provenance(tmp_path):
    coords = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3) / 7
    seq = Sequence3D([3, 4], coords, [[2, 0], [1, 4]], ("nose", "tail"))
    p = tmp_path / "s.csv"
    emit_sequence(seq, p)
    text = p.read_text().splitlines()
    assert text[0] == "frame,keypoint,x,y,z,z_source,n_side_cams"
    assert text[2].endswith("interpolated,0")
    back = parse_sequence(p)
    assert back == seq
    fr = back.frames[0]
    assert fr.is_interpolated("tail") and not fr.is_interpolated("nose")
    assert Sequence3D.from_frames(back.frames, back.keypoint_names) == seq


def test_sequence_parse_rejects_inconsistent(tmp_path):
    head = "frame,keypoint,x,y,z,z_source,n_side_cams\n"
    p = write(tmp_path, "a.csv", head + "0,nose,1,2,3,measured,0\n")
    with pytest.raises(ValidationError, match="inconsistent"):
        parse_sequence(p)
    p = write(tmp_path, "b.csv", head + "0,nose,1,2,3,measured,1\n0,tail,1,2,3,measured,1\n1,nose,1,2,3,measured,1\n")
    with pytest.raises(ValidationError, match="missing keypoint"):
        parse_sequence(p)
    p = write(tmp_path, "c.csv", head + "1,nose,1,2,3,measured,1\n0,nose,1,2,3,measured,1\n")
    with pytest.raises(ValidationError, match="increasing"):
        parse_sequence(p)


def test_sequence_shape_validation():
    with pytest.raises(ValidationError):
        Sequence3D([0, 1], np.zeros((2, 3, 3)), None, ("a", "b"))
    with pytest.raises(ValidationError):
        Sequence3D([1, 1], np.zeros((2, 1, 3)), None, ("a",))


def test_pose_frame_keys_must_match():
    with pytest.raises(ValidationError):
        Pose3DFrame(0, {"a": (0, 0, 0)}, {"b": 1})


def test_calibration_samples_round_trip(tmp_path):
    samples = {"side0": [CalibrationSample(1.0, 2.0, 3.0)], "side1": [CalibrationSample(0.1, 0.2, 0.3)] * 2}
    p = tmp_path / "c.csv"
    emit_calibration_samples(samples, p)
    assert parse_calibration_samples(p) == samples


def test_calibration_distance_positive(tmp_path):
    p = write(tmp_path, "c.csv", "camera,v,distance,z\nside0,1,0,3\n")
    with pytest.raises(ValidationError, match="distance"):
        parse_calibration_samples(p)


def rig_doc():
    return {
        "bottom_scale": 0.5,
        "side_cameras": [{"camera_id": "s0", "plane_position": [400, 0], "calibration_id": "c0"}],
    }


def test_config_defaults_filled(tmp_path):
    p = write(tmp_path, "c.json", json.dumps({"rig": rig_doc()}))
    rig, run = parse_config(p)
    assert rig.fps == 50.0 and rig.bottom_scale == 0.5
    assert run == RunConfig()
    assert run.epochs == 150 and run.lr0 == 0.001 and run.lr_decay == 0.95
    assert run.dropout == 0.25 and run.runs == 10 and run.test_fraction == 0.2
    assert run.confidence_threshold == 0.95 and run.channels == 1024


@pytest.mark.parametrize(
    "doc, match",
    [
        ({}, "rig"),
        ({"rig": {"side_cameras": []}}, "bottom_scale"),
        ({"rig": {"bottom_scale": 1}}, "side_cameras"),
        ({"rig": rig_doc(), "run": {"epochz": 3}}, "unknown run keys"),
        ({"rig": {**rig_doc(), "side_cameras": [{"camera_id": "s"}]}}, "plane_position"),
    ],
)
def test_config_errors(doc, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(doc)


def test_config_invalid_json(tmp_path):
    p = write(tmp_path, "c.json", '{"rig": ')
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_config_calibration_must_cover_cameras():
    surf = PolySurface.constant(1.0, "other").to_dict()
    with pytest.raises(ValidationError, match="missing calibration"):
        config_from_dict({"rig": rig_doc(), "calibration": [surf]})


def test_config_dump_round_trip(tmp_path):
    rig = CameraRig(0.5, (SideCamera("s0", (1.0, 2.0), "c0"),))
    surf = PolySurface("c0", 1, 1, np.array([[1.0, 2.0], [3.0, 4.0]]), 0.25)
    cfg = Config(rig, RunConfig(seed=7, windows=(3, 9)), {"c0": surf}, {"frames": 10})
    p = tmp_path / "c.json"
    dump_config(cfg, p)
    back = load_config(p)
    assert back.rig == rig and back.run == cfg.run and back.surfaces == {"c0": surf}
    assert back.synth == {"frames": 10}
    dump_config(back, tmp_path / "d.json")
    assert (tmp_path / "d.json").read_bytes() == p.read_bytes()


def test_rig_validation():
    with pytest.raises(ValidationError):
        CameraRig(0.5, ())
    cam = SideCamera("s0", (0, 0), "c")
    with pytest.raises(ValidationError):
        CameraRig(0.5, (cam, cam))
    with pytest.raises(ValidationError):
        CameraRig(-1, (cam,))


def test_run_config_validation_and_replace():
    with pytest.raises(ValidationError):
        RunConfig(test_fraction=1.0)
    with pytest.raises(ValidationError):
        RunConfig(scenario="yz-x")
    r = RunConfig().replace(seed=3, window=None)
    assert r.seed == 3 and r.window == 135
