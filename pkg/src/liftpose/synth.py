"""Deterministic synthetic recordings for desk-scale verification.

Keypoint (x, y) tracks are sums of sinusoids placed on the DFT grid of the
sequence, so they are exactly band-limited and periodic. Height carries a
temporal depth cue: with ``z_coupling = 1`` it is a function of the
keypoint's planar speed averaged over a centred one-second window, which a
single frame of (x, y) cannot reveal.
"""

import math
import zlib
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels
from .calib import CalibrationSample, PolySurface, invert_v
from .datamodel import DEFAULT_KEYPOINTS, CameraRig, Detection2D, Sequence3D, SideCamera
from .errors import ValidationError
from .nncore import derive_seed

HIGH_CONFIDENCE = 0.99
LOW_CONFIDENCE = 0.5

# per-keypoint resting layout in mm, body axis along +x
_LAYOUT = {
    "nose": (30.0, 0.0),
    "tailbase": (-30.0, 0.0),
    "left_forepaw": (15.0, 12.0),
    "right_forepaw": (15.0, -12.0),
    "left_hindpaw": (-15.0, 14.0),
    "right_hindpaw": (-15.0, -14.0),
    "left_ear": (20.0, 8.0),
    "right_ear": (20.0, -8.0),
}


def default_planted_surface(calibration_id="planted"):
    """Perspective-like height map z(v, d) with mild curvature in v."""
    c = np.zeros((3, 3))
    c[0, 1] = -40.0 / 900.0
    c[1, 1] = 1.0 / 900.0
    c[2, 0] = 5e-5
    return PolySurface(calibration_id, 2, 2, c)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    frames: int = 2000
    fps: float = 50.0
    keypoints: tuple = DEFAULT_KEYPOINTS
    bandwidth_hz: float = 1.0
    z_coupling: float = 0.0
    noise_px: float = 0.0
    dropout_prob: float = 0.0
    planted_surface: PolySurface = field(default_factory=default_planted_surface)
    n_sinusoids: int = 8
    amplitude_mm: float = 12.0
    z_offset_mm: float = 25.0
    z_amplitude_mm: float = 4.0
    speed_gain_s: float = 0.2
    depth_window_s: float = 1.0
    bottom_dropout_prob: float = 0.0
    v_search: tuple = (0.0, 3000.0)
    calibration_heights: tuple = (5.0, 35.0, 65.0)
    calibration_positions: int = 24
    calibration_noise_px: float = 0.0
    arena_radius_mm: float = 140.0

    def __post_init__(self):
        if self.frames < 1:
            raise ValidationError(f"frames must be >= 1, got {self.frames}")
        if not self.fps > 0:
            raise ValidationError("fps must be > 0")
        if not 0 < self.bandwidth_hz < self.fps / 2:
            raise ValidationError(f"bandwidth {self.bandwidth_hz} Hz must be below fps/2 = {self.fps / 2}")
        if not 0 <= self.z_coupling <= 1:
            raise ValidationError("z_coupling must be in [0, 1]")
        if self.noise_px < 0 or self.calibration_noise_px < 0:
            raise ValidationError("noise must be >= 0")
        if not (0 <= self.dropout_prob < 1 and 0 <= self.bottom_dropout_prob < 1):
            raise ValidationError("dropout probabilities must be in [0, 1)")
        object.__setattr__(self, "keypoints", tuple(self.keypoints))

    @classmethod
    def from_dict(cls, d, **overrides):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown synth keys: {unknown}")
        d = dict(d)
        if "planted_surface" in d and isinstance(d["planted_surface"], dict):
            d["planted_surface"] = PolySurface.from_dict(d["planted_surface"])
        for key in ("keypoints", "v_search", "calibration_heights"):
            if key in d:
                d[key] = tuple(d[key])
        d.update(overrides)
        return cls(**d)


def default_rig(keypoints=DEFAULT_KEYPOINTS, n_side=4, radius_mm=400.0, bottom_scale=0.5, fps=50.0):
    """Bottom camera plus ``n_side`` side cameras evenly spaced around the arena."""
    cams = []
    for i in range(n_side):
        a = 2 * math.pi * i / n_side
        pos = (round(radius_mm * math.cos(a), 9) + 0.0, round(radius_mm * math.sin(a), 9) + 0.0)
        cams.append(SideCamera(f"side{i}", pos, f"side{i}"))
    return CameraRig(bottom_scale=bottom_scale, side_cameras=tuple(cams), fps=fps, keypoints=tuple(keypoints))


def _bins(rng, spec, size):
    kmax = int(math.floor(spec.bandwidth_hz * spec.frames / spec.fps))
    return rng.integers(1, max(kmax, 1) + 1, size=size)


def _sinusoids(rng, spec, amplitude, t):
    """Sum of n_sinusoids with DFT-grid frequencies; returns (value, derivative)."""
    n = spec.n_sinusoids
    freq = _bins(rng, spec, n) * spec.fps / spec.frames
    amp = rng.uniform(0.0, amplitude, n)
    phase = rng.uniform(0.0, 2 * math.pi, n)
    arg = 2 * math.pi * freq[:, None] * t[None, :] + phase[:, None]
    value = (amp[:, None] * np.sin(arg)).sum(axis=0)
    deriv = (amp[:, None] * 2 * math.pi * freq[:, None] * np.cos(arg)).sum(axis=0)
    return value, deriv


def depth_window_frames(spec):
    half = int(round(spec.fps * spec.depth_window_s / 2))
    return 2 * half + 1


def windowed_speed(speed, window):
    """Circular centred moving average (the sequence is periodic)."""
    half = window // 2
    n = speed.size
    # modular indices so sequences shorter than the window still wrap
    padded = speed[np.arange(-half, n + half) % n]
    kernel = np.full(window, 1.0 / window)
    return np.convolve(padded, kernel, mode="valid")


def gen_sequence(spec):
    """Ground-truth Sequence3D (mm)."""
    rng = np.random.default_rng(derive_seed(spec.seed, 1))
    t = np.arange(spec.frames) / spec.fps
    k = len(spec.keypoints)
    coords = np.empty((spec.frames, k, 3))
    win = depth_window_frames(spec)
    for i, name in enumerate(spec.keypoints):
        base = _LAYOUT.get(name, (0.0, 0.0))
        x, dx = _sinusoids(rng, spec, spec.amplitude_mm, t)
        y, dy = _sinusoids(rng, spec, spec.amplitude_mm, t)
        z_free, _ = _sinusoids(rng, spec, spec.z_amplitude_mm, t)
        cue = spec.speed_gain_s * windowed_speed(np.hypot(dx, dy), win)
        coords[:, i, 0] = base[0] + x
        coords[:, i, 1] = base[1] + y
        coords[:, i, 2] = spec.z_offset_mm + (1 - spec.z_coupling) * z_free + spec.z_coupling * cue
    return Sequence3D(np.arange(spec.frames), coords, None, spec.keypoints, spec.fps)


def check_invertible(surface, z_range, d_range, v_range, n=64):
    """Raise ValidationError unless z(v, d) is strictly monotone in v on the box
    and the requested heights are reachable."""
    v = np.linspace(*v_range, n)
    d = np.linspace(*d_range, n)
    vv, dd = np.meshgrid(v, d, indexing="ij")
    dcoef = surface.coefficients[1:] * np.arange(1, surface.degree_v + 1)[:, None]
    if dcoef.size == 0:
        raise ValidationError("planted surface does not depend on v; cannot invert")
    slope = kernels.horner2d(dcoef, vv, dd)
    if not (np.all(slope > 0) or np.all(slope < 0)):
        raise ValidationError("planted surface is not monotone in v over the requested range")
    lo = kernels.horner2d(surface.coefficients, np.full_like(d, v_range[0]), d)
    hi = kernels.horner2d(surface.coefficients, np.full_like(d, v_range[1]), d)
    zmin, zmax = np.minimum(lo, hi), np.maximum(lo, hi)
    if np.any(zmin > z_range[0]) or np.any(zmax < z_range[1]):
        raise ValidationError(f"heights {z_range} not reachable within pixel range {v_range}")


def project(seq, rig, spec):
    """Render a ground-truth sequence into bottom and side detections."""
    rng_noise = np.random.default_rng(derive_seed(spec.seed, 2))
    rng_drop = np.random.default_rng(derive_seed(spec.seed, 3))
    f, k = len(seq), len(seq.keypoint_names)
    x, y, z = seq.coords[..., 0], seq.coords[..., 1], seq.coords[..., 2]
    v_lo, v_hi = spec.v_search

    def conf(p):
        return np.where(rng_drop.random((f, k)) < p, LOW_CONFIDENCE, HIGH_CONFIDENCE)

    def noise():
        if spec.noise_px == 0:
            return np.zeros((f, k))
        return rng_noise.normal(0.0, spec.noise_px, (f, k))

    streams = {}
    bu = x / rig.bottom_scale + noise()
    bv = y / rig.bottom_scale + noise()
    streams[rig.bottom_camera_id] = (bu, bv, conf(spec.bottom_dropout_prob))
    for cam in rig.side_cameras:
        px, py = cam.plane_position
        dist = np.hypot(x - px, y - py)
        check_invertible(
            spec.planted_surface, (z.min(), z.max()), (dist.min(), dist.max()), (v_lo, v_hi)
        )
        v = invert_v(spec.planted_surface, z, dist, v_lo, v_hi) + noise()
        # lateral image coordinate: perspective projection of the offset
        # perpendicular to the camera's line of sight through the arena centre
        norm = math.hypot(px, py) or 1.0
        lateral = (x * -py + y * px) / norm
        u = 900.0 * lateral / dist
        streams[cam.camera_id] = (u, v, conf(spec.dropout_prob))

    out = []
    cam_order = sorted(streams)
    kp_order = sorted(range(k), key=lambda i: seq.keypoint_names[i])
    for i in range(f):
        fi = int(seq.frame_index[i])
        for cid in cam_order:
            u, v, c = streams[cid]
            for j in kp_order:
                out.append(
                    Detection2D(fi, cid, seq.keypoint_names[j], float(u[i, j]), float(v[i, j]), float(c[i, j]))
                )
    return out


def gen_calibration(spec, camera, rig=None):
    """Marker samples at the configured heights over seeded arena positions."""
    rng = np.random.default_rng(derive_seed(spec.seed, 4, _camera_key(camera.camera_id)))
    n = spec.calibration_positions
    r = spec.arena_radius_mm * np.sqrt(rng.random(n))
    a = rng.uniform(0, 2 * math.pi, n)
    px, py = camera.plane_position
    dist = np.hypot(r * np.cos(a) - px, r * np.sin(a) - py)
    heights = np.asarray(spec.calibration_heights, dtype=np.float64)
    zz = np.repeat(heights[None, :], n, axis=0)
    dd = np.repeat(dist[:, None], heights.size, axis=1)
    check_invertible(spec.planted_surface, (heights.min(), heights.max()), (dist.min(), dist.max()), spec.v_search)
    v = invert_v(spec.planted_surface, zz, dd, *spec.v_search)
    if spec.calibration_noise_px > 0:
        v = v + rng.normal(0.0, spec.calibration_noise_px, v.shape)
    return [
        CalibrationSample(float(v[i, j]), float(dd[i, j]), float(zz[i, j]))
        for i in range(n)
        for j in range(heights.size)
    ]


def _camera_key(camera_id):
    return zlib.crc32(camera_id.encode("utf-8"))
