"""Domain types, CSV interchange and JSON configuration."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .calib import CalibrationSample, PolySurface
from .errors import ConfigError, ParseError, ValidationError

DEFAULT_KEYPOINTS = (
    "nose",
    "tailbase",
    "left_forepaw",
    "right_forepaw",
    "left_hindpaw",
    "right_hindpaw",
    "left_ear",
    "right_ear",
)

DETECTIONS_HEADER = ("frame", "camera", "keypoint", "u", "v", "confidence")
SEQUENCE_HEADER = ("frame", "keypoint", "x", "y", "z", "z_source", "n_side_cams")
CALIBRATION_HEADER = ("camera", "v", "distance", "z")

U64_MAX = 2**64 - 1


@dataclass(frozen=True, slots=True)
class Detection2D:
    frame_index: int
    camera_id: str
    keypoint: str
    u_px: float
    v_px: float
    confidence: float

    def key(self):
        return (self.frame_index, self.camera_id, self.keypoint)


@dataclass(frozen=True)
class SideCamera:
    camera_id: str
    plane_position: tuple
    calibration_id: str


@dataclass(frozen=True)
class CameraRig:
    bottom_scale: float
    side_cameras: tuple
    fps: float = 50.0
    bottom_camera_id: str = "bottom"
    keypoints: tuple = DEFAULT_KEYPOINTS

    def __post_init__(self):
        if not self.side_cameras:
            raise ValidationError("rig needs at least one side camera")
        if not self.fps > 0:
            raise ValidationError(f"fps must be > 0, got {self.fps}")
        if not self.bottom_scale > 0:
            raise ValidationError(f"bottom_scale must be > 0, got {self.bottom_scale}")
        ids = [c.camera_id for c in self.side_cameras]
        if len(set(ids)) != len(ids) or self.bottom_camera_id in ids:
            raise ValidationError(f"camera ids must be unique: {ids + [self.bottom_camera_id]}")
        if len(set(self.keypoints)) != len(self.keypoints) or not self.keypoints:
            raise ValidationError(f"keypoint names must be unique and non-empty: {self.keypoints}")

    def side_camera(self, camera_id):
        for cam in self.side_cameras:
            if cam.camera_id == camera_id:
                return cam
        raise ValidationError(f"unknown side camera {camera_id!r}")

    def check_surfaces(self, surfaces):
        missing = [c.calibration_id for c in self.side_cameras if c.calibration_id not in surfaces]
        if missing:
            raise ValidationError(f"side cameras reference missing calibration surfaces: {missing}")

    def to_dict(self):
        return {
            "bottom_scale": self.bottom_scale,
            "fps": self.fps,
            "bottom_camera_id": self.bottom_camera_id,
            "keypoints": list(self.keypoints),
            "side_cameras": [
                {
                    "camera_id": c.camera_id,
                    "plane_position": list(c.plane_position),
                    "calibration_id": c.calibration_id,
                }
                for c in self.side_cameras
            ],
        }


@dataclass(frozen=True)
class Pose3DFrame:
    """One frame of 3D keypoints.

    ``z_provenance`` maps keypoint -> number of side cameras that measured z;
    0 marks an interpolated value.
    """

    frame_index: int
    coords: dict
    z_provenance: dict

    def __post_init__(self):
        if set(self.coords) != set(self.z_provenance):
            raise ValidationError("coords and z_provenance must share keypoints")

    def is_interpolated(self, keypoint):
        return self.z_provenance[keypoint] == 0


class Sequence3D:
    """Array-backed 3D keypoint sequence.

    coords has shape (frames, keypoints, 3) in mm; n_cams has shape
    (frames, keypoints) with 0 meaning the z value was interpolated.
    """

    def __init__(self, frame_index, coords, n_cams, keypoint_names, fps=50.0):
        self.frame_index = np.asarray(frame_index, dtype=np.int64)
        self.coords = np.asarray(coords, dtype=np.float64)
        self.keypoint_names = tuple(keypoint_names)
        if n_cams is None:
            n_cams = np.ones(self.coords.shape[:2], dtype=np.int64)
        self.n_cams = np.asarray(n_cams, dtype=np.int64)
        self.fps = float(fps)
        f = self.frame_index.shape[0]
        k = len(self.keypoint_names)
        if self.coords.shape != (f, k, 3) or self.n_cams.shape != (f, k):
            raise ValidationError(
                f"inconsistent sequence shapes: frames {f}, keypoints {k}, "
                f"coords {self.coords.shape}, n_cams {self.n_cams.shape}"
            )
        if f > 1 and np.any(np.diff(self.frame_index) <= 0):
            raise ValidationError("frame indices must be strictly increasing")
        if np.any(self.n_cams < 0):
            raise ValidationError("n_cams must be non-negative")

    def __len__(self):
        return self.frame_index.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Sequence3D):
            return NotImplemented
        return (
            self.keypoint_names == other.keypoint_names
            and self.fps == other.fps
            and np.array_equal(self.frame_index, other.frame_index)
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.n_cams, other.n_cams)
        )

    @property
    def frames(self):
        out = []
        for i, fi in enumerate(self.frame_index):
            coords = {kp: tuple(float(c) for c in self.coords[i, k]) for k, kp in enumerate(self.keypoint_names)}
            prov = {kp: int(self.n_cams[i, k]) for k, kp in enumerate(self.keypoint_names)}
            out.append(Pose3DFrame(int(fi), coords, prov))
        return out

    @classmethod
    def from_frames(cls, frames, keypoint_names, fps=50.0):
        names = tuple(keypoint_names)
        coords = np.empty((len(frames), len(names), 3))
        n_cams = np.empty((len(frames), len(names)), dtype=np.int64)
        for i, fr in enumerate(frames):
            if set(fr.coords) != set(names):
                raise ValidationError(f"frame {fr.frame_index} does not contain every keypoint")
            for k, kp in enumerate(names):
                coords[i, k] = fr.coords[kp]
                n_cams[i, k] = fr.z_provenance[kp]
        return cls([fr.frame_index for fr in frames], coords, n_cams, names, fps)

    def with_coords(self, coords):
        return Sequence3D(self.frame_index, coords, self.n_cams, self.keypoint_names, self.fps)


@dataclass(frozen=True)
class RunConfig:
    epochs: int = 150
    lr0: float = 0.001
    lr_decay: float = 0.95
    dropout: float = 0.25
    runs: int = 10
    test_fraction: float = 0.2
    channels: int = 1024
    seed: int = 0
    confidence_threshold: float = 0.95
    ewma_alpha: float = 0.5
    bn_momentum_start: float = 0.1
    bn_momentum_end: float = 0.001
    batch_size_linear: int = 256
    batch_size_temporal: int = 64
    linear_blocks: int = 1
    window: int = 135
    windows: tuple = (15, 27, 45, 81, 135, 243)
    scenario: str = "xy-z"
    rotate_x_deg: float = 0.0
    align: bool = True
    degree_v: int = 2
    degree_d: int = 2

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValidationError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not 0 <= self.dropout < 1:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0 < self.lr_decay <= 1:
            raise ValidationError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.runs < 1:
            raise ValidationError(f"runs must be >= 1, got {self.runs}")
        if self.channels < 1:
            raise ValidationError(f"channels must be >= 1, got {self.channels}")
        if not 0 <= self.seed <= U64_MAX:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not 0 <= self.confidence_threshold <= 1:
            raise ValidationError(f"confidence_threshold must be in [0, 1], got {self.confidence_threshold}")
        if not 0 < self.ewma_alpha <= 1:
            raise ValidationError(f"ewma_alpha must be in (0, 1], got {self.ewma_alpha}")
        if not (0 < self.bn_momentum_start <= 1 and 0 < self.bn_momentum_end <= 1):
            raise ValidationError("batchnorm momenta must be in (0, 1]")
        if self.lr0 <= 0:
            raise ValidationError(f"lr0 must be > 0, got {self.lr0}")
        if self.batch_size_linear < 1 or self.batch_size_temporal < 1:
            raise ValidationError("batch sizes must be >= 1")
        if self.scenario not in ("xy-z", "xz-y", "zy-x"):
            raise ValidationError(f"scenario must be one of xy-z, xz-y, zy-x; got {self.scenario!r}")
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))

    def replace(self, **changes):
        data = asdict(self)
        data.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig(**data)

    def to_dict(self):
        d = asdict(self)
        d["windows"] = list(self.windows)
        return d


@dataclass
class Config:
    rig: CameraRig
    run: RunConfig = field(default_factory=RunConfig)
    surfaces: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "rig": self.rig.to_dict(),
            "run": self.run.to_dict(),
            "calibration": [s.to_dict() for s in self.surfaces.values()],
            "synth": dict(self.synth),
        }


# --- CSV ---------------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected header", line=1) from None
        if tuple(h.strip() for h in first) != header:
            raise ParseError(f"header must be {','.join(header)}, got {','.join(first)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            yield lineno, row


def _float(text, lineno, name):
    try:
        x = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line=lineno, field=name) from None
    if not math.isfinite(x):
        raise ParseError(f"non-finite value {text!r}", line=lineno, field=name)
    return x


def _int(text, lineno, name):
    try:
        x = int(text)
    except ValueError:
        raise ParseError(f"not an integer: {text!r}", line=lineno, field=name) from None
    if x < 0:
        raise ParseError(f"must be non-negative, got {x}", line=lineno, field=name)
    return x


def parse_detections(path):
    """Read a detections CSV, sorted by (frame, camera, keypoint)."""
    out = []
    seen = {}
    for lineno, row in _read_rows(path, DETECTIONS_HEADER):
        frame = _int(row[0], lineno, "frame")
        cam, kp = row[1], row[2]
        if not cam or not kp:
            raise ParseError("camera and keypoint must be non-empty", line=lineno)
        u = _float(row[3], lineno, "u")
        v = _float(row[4], lineno, "v")
        conf = _float(row[5], lineno, "confidence")
        if not 0.0 <= conf <= 1.0:
            raise ValidationError(f"line {lineno}: confidence {conf} outside [0, 1]")
        det = Detection2D(frame, cam, kp, u, v, conf)
        key = det.key()
        if key in seen:
            raise ValidationError(f"line {lineno}: duplicate detection {key} (first at line {seen[key]})")
        seen[key] = lineno
        out.append(det)
    out.sort(key=Detection2D.key)
    return out


def emit_detections(detections, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTIONS_HEADER)
        for d in detections:
            w.writerow((d.frame_index, d.camera_id, d.keypoint, _fmt(d.u_px), _fmt(d.v_px), _fmt(d.confidence)))


def emit_sequence(seq, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEQUENCE_HEADER)
        for i, fi in enumerate(seq.frame_index):
            for k, kp in enumerate(seq.keypoint_names):
                x, y, z = seq.coords[i, k]
                n = int(seq.n_cams[i, k])
                w.writerow((int(fi), kp, _fmt(x), _fmt(y), _fmt(z), "measured" if n > 0 else "interpolated", n))


def parse_sequence(path, fps=50.0):
    frames = []
    names = []
    rows = {}
    for lineno, row in _read_rows(path, SEQUENCE_HEADER):
        frame = _int(row[0], lineno, "frame")
        kp = row[1]
        xyz = tuple(_float(row[j], lineno, SEQUENCE_HEADER[j]) for j in (2, 3, 4))
        source = row[5]
        n = _int(row[6], lineno, "n_side_cams")
        if source not in ("measured", "interpolated"):
            raise ParseError(f"z_source must be measured or interpolated, got {source!r}", line=lineno, field="z_source")
        if (source == "measured") != (n > 0):
            raise ValidationError(f"line {lineno}: z_source {source} inconsistent with n_side_cams {n}")
        if not frames or frames[-1] != frame:
            if frames and frame <= frames[-1]:
                raise ValidationError(f"line {lineno}: frame indices must be strictly increasing")
            frames.append(frame)
        if len(frames) == 1 and kp not in names:
            names.append(kp)
        if (frame, kp) in rows:
            raise ValidationError(f"line {lineno}: duplicate row for frame {frame}, keypoint {kp!r}")
        rows[(frame, kp)] = (xyz, n)
    if not frames:
        raise ValidationError(f"{path}: sequence has no rows")
    coords = np.empty((len(frames), len(names), 3))
    n_cams = np.empty((len(frames), len(names)), dtype=np.int64)
    for i, fr in enumerate(frames):
        for k, kp in enumerate(names):
            try:
                coords[i, k], n_cams[i, k] = rows.pop((fr, kp))
            except KeyError:
                raise ValidationError(f"frame {fr} is missing keypoint {kp!r}") from None
    if rows:
        extra = next(iter(rows))
        raise ValidationError(f"keypoint {extra[1]!r} at frame {extra[0]} not present in the first frame")
    return Sequence3D(frames, coords, n_cams, names, fps)


def parse_calibration_samples(path):
    """Read calibration samples, grouped by camera id in file order."""
    out = {}
    for lineno, row in _read_rows(path, CALIBRATION_HEADER):
        cam = row[0]
        v = _float(row[1], lineno, "v")
        d = _float(row[2], lineno, "distance")
        z = _float(row[3], lineno, "z")
        if d <= 0:
            raise ValidationError(f"line {lineno}: distance must be > 0, got {d}")
        out.setdefault(cam, []).append(CalibrationSample(v, d, z))
    return out


def emit_calibration_samples(samples_by_camera, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_HEADER)
        for cam, samples in samples_by_camera.items():
            for s in samples:
                w.writerow((cam, _fmt(s.v_px), _fmt(s.distance_mm), _fmt(s.z_mm)))


# --- configuration -----------------------------------------------------------


def _rig_from_dict(d):
    if not isinstance(d, dict):
        raise ConfigError("'rig' must be an object")
    for key in ("side_cameras", "bottom_scale"):
        if key not in d:
            raise ConfigError(f"rig.{key} is required")
    cams = []
    for i, c in enumerate(d["side_cameras"]):
        try:
            pos = tuple(float(p) for p in c["plane_position"])
            if len(pos) != 2:
                raise ValueError
            cams.append(SideCamera(str(c["camera_id"]), pos, str(c.get("calibration_id", c["camera_id"]))))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(
                f"rig.side_cameras[{i}] needs camera_id and a 2-element plane_position"
            ) from None
    kwargs = {}
    if "fps" in d:
        kwargs["fps"] = float(d["fps"])
    if "bottom_camera_id" in d:
        kwargs["bottom_camera_id"] = str(d["bottom_camera_id"])
    if "keypoints" in d:
        kwargs["keypoints"] = tuple(str(k) for k in d["keypoints"])
    return CameraRig(bottom_scale=float(d["bottom_scale"]), side_cameras=tuple(cams), **kwargs)


def _run_from_dict(d):
    if d is None:
        return RunConfig()
    if not isinstance(d, dict):
        raise ConfigError("'run' must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown run keys: {unknown}")
    try:
        return RunConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad run section: {exc}") from None


def config_from_dict(doc):
    if not isinstance(doc, dict) or "rig" not in doc:
        raise ConfigError("config must be an object with a 'rig' section")
    rig = _rig_from_dict(doc["rig"])
    run = _run_from_dict(doc.get("run"))
    surfaces = {}
    for entry in doc.get("calibration") or []:
        try:
            s = PolySurface.from_dict(entry)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad calibration entry: {exc}") from None
        surfaces[s.calibration_id] = s
    if surfaces:
        rig.check_surfaces(surfaces)
    return Config(rig=rig, run=run, surfaces=surfaces, synth=dict(doc.get("synth") or {}))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(doc)


def parse_config(path):
    """Return (CameraRig, RunConfig) with defaults filled in."""
    cfg = load_config(path)
    return cfg.rig, cfg.run


def dump_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
