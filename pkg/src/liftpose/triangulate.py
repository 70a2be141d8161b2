"""Fuse bottom-view (x, y) with calibrated side-view heights into 3D."""

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .datamodel import Sequence3D
from .errors import EmptyInputError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZEstimate:
    value_mm: float | None
    n_cameras: int

    def __post_init__(self):
        if (self.value_mm is not None) != (self.n_cameras >= 1):
            raise ValidationError("ZEstimate value must be present iff n_cameras >= 1")

    @property
    def missing(self):
        return self.value_mm is None


def _mean_sorted(values):
    # sorted sequential sum: permutation invariant and mirrored exactly by
    # the vectorised path in triangulate_sequence
    acc = 0.0
    for x in sorted(values):
        acc = acc + x
    return acc / len(values)


def estimate_z(frame, keypoint, xy_mm, side_detections, rig, surfaces, threshold):
    """Mean height over side cameras whose confidence is strictly above threshold."""
    x, y = float(xy_mm[0]), float(xy_mm[1])
    values = []
    for det in side_detections:
        if det.frame_index != frame or det.keypoint != keypoint:
            raise ValidationError(
                f"detection {det.key()} does not belong to frame {frame}, keypoint {keypoint!r}"
            )
        cam = rig.side_camera(det.camera_id)
        if not det.confidence > threshold:
            continue
        px, py = cam.plane_position
        dist = np.hypot(np.float64(x) - px, np.float64(y) - py)
        z = kernels.horner2d(surfaces[cam.calibration_id].coefficients, np.array([det.v_px]), np.array([dist]))
        values.append(float(z[0]))
    if not values:
        return ZEstimate(None, 0)
    return ZEstimate(_mean_sorted(values), len(values))


def ewma_fill(series, alpha=0.5):
    """Zero-phase EWMA gap fill.

    ``series`` holds floats with ``None`` or NaN marking missing slots. Present
    slots come back unchanged; missing slots get the mean of a forward and a
    backward EWMA whose state only advances on present values.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    values = np.array([np.nan if s is None else s for s in series], dtype=np.float64)
    present = ~np.isnan(values)
    if not present.any():
        raise ValueError("cannot fill a series with no present values")
    return kernels.ewma_fill(np.where(present, values, 0.0), present, alpha)


def _index(detections, rig):
    kp_index = {kp: k for k, kp in enumerate(rig.keypoints)}
    cam_index = {rig.bottom_camera_id: 0}
    for i, cam in enumerate(rig.side_cameras, start=1):
        cam_index[cam.camera_id] = i
    n = len(detections)
    frame = np.empty(n, dtype=np.int64)
    cam = np.empty(n, dtype=np.int64)
    kp = np.empty(n, dtype=np.int64)
    uvc = np.empty((n, 3), dtype=np.float64)
    for i, d in enumerate(detections):
        try:
            cam[i] = cam_index[d.camera_id]
        except KeyError:
            raise ValidationError(f"detection references unknown camera {d.camera_id!r}") from None
        try:
            kp[i] = kp_index[d.keypoint]
        except KeyError:
            raise ValidationError(f"detection references unknown keypoint {d.keypoint!r}") from None
        frame[i] = d.frame_index
        uvc[i] = (d.u_px, d.v_px, d.confidence)
    return frame, cam, kp, uvc


def triangulate_sequence(detections, rig, surfaces, config):
    """Build a gap-free Sequence3D and report side-view coverage.

    Coverage is the fraction of frames in which every keypoint had at least one
    qualifying side detection before interpolation.
    """
    if not detections:
        raise EmptyInputError("no detections: nothing to triangulate")
    rig.check_surfaces(surfaces)
    thr = config.confidence_threshold
    alpha = config.ewma_alpha
    frame, cam, kp, uvc = _index(detections, rig)
    frames = np.unique(frame)
    fpos = np.searchsorted(frames, frame)
    n_f, n_k = frames.size, len(rig.keypoints)

    bottom = cam == 0
    missing_kp = sorted(set(range(n_k)) - set(kp[bottom].tolist()))
    if missing_kp:
        names = [rig.keypoints[k] for k in missing_kp]
        raise ValidationError(f"keypoint(s) missing from the bottom stream: {names}")

    xy = np.full((n_f, n_k, 2), np.nan)
    ok = bottom & (uvc[:, 2] > thr)
    xy[fpos[ok], kp[ok], 0] = uvc[ok, 0] * rig.bottom_scale
    xy[fpos[ok], kp[ok], 1] = uvc[ok, 1] * rig.bottom_scale
    for k in range(n_k):
        have = ~np.isnan(xy[:, k, 0])
        if not have.any():
            raise ValidationError(
                f"keypoint {rig.keypoints[k]!r} has no bottom detection above confidence {thr}"
            )
        if not have.all():
            for a in range(2):
                xy[:, k, a] = kernels.ewma_fill(np.where(have, xy[:, k, a], 0.0), have, alpha)

    n_side = len(rig.side_cameras)
    zs = np.full((n_side, n_f, n_k), np.nan)
    for c, side in enumerate(rig.side_cameras, start=1):
        sel = (cam == c) & (uvc[:, 2] > thr)
        f_i, k_i = fpos[sel], kp[sel]
        px, py = side.plane_position
        dist = np.hypot(xy[f_i, k_i, 0] - px, xy[f_i, k_i, 1] - py)
        zs[c - 1, f_i, k_i] = kernels.horner2d(surfaces[side.calibration_id].coefficients, uvc[sel, 1], dist)
    n_cams = (~np.isnan(zs)).sum(axis=0)
    zs = np.sort(zs, axis=0)
    acc = np.zeros((n_f, n_k))
    for c in range(n_side):
        acc = acc + np.where(np.isnan(zs[c]), 0.0, zs[c])
    z = np.where(n_cams > 0, acc / np.maximum(n_cams, 1), np.nan)

    for k in range(n_k):
        have = n_cams[:, k] > 0
        if not have.any():
            raise ValidationError(
                f"keypoint {rig.keypoints[k]!r} has no side detection above confidence {thr}"
            )
        if not have.all():
            z[:, k] = kernels.ewma_fill(np.where(have, z[:, k], 0.0), have, alpha)

    coverage = float(np.mean(np.all(n_cams > 0, axis=1)))
    coords = np.concatenate([xy, z[:, :, None]], axis=2)
    seq = Sequence3D(frames, coords, n_cams, rig.keypoints, rig.fps)
    log.info("triangulated %d frames, coverage %.4f", n_f, coverage)
    return seq, coverage

