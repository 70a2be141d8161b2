"""Alignment, scenario construction, standardization and splitting."""

import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Pose3DFrame, Sequence3D
from .errors import DegeneratePoseError, ValidationError

AXES = "xyz"


@dataclass(frozen=True)
class Scenario:
    input_axes: tuple
    output_axis: str
    pre_rotation: tuple = None  # (axis, degrees)

    def __post_init__(self):
        axes = tuple(self.input_axes)
        if len(axes) != 2 or len(set(axes)) != 2 or any(a not in AXES for a in axes):
            raise ValidationError(f"input_axes must be two distinct axes from x/y/z, got {axes}")
        if self.output_axis not in AXES or self.output_axis in axes:
            raise ValidationError(f"output_axis must be the remaining axis, got {self.output_axis!r}")
        if self.pre_rotation is not None:
            ax, deg = self.pre_rotation
            if ax not in AXES:
                raise ValidationError(f"rotation axis must be x, y or z, got {ax!r}")
            object.__setattr__(self, "pre_rotation", (ax, float(deg)))
        object.__setattr__(self, "input_axes", axes)

    @classmethod
    def parse(cls, name, rotate_x_deg=0.0):
        """``xy-z`` style name plus an optional x-axis pre-rotation."""
        try:
            left, out = name.split("-")
        except ValueError:
            raise ValidationError(f"scenario must look like 'xy-z', got {name!r}") from None
        rot = ("x", float(rotate_x_deg)) if rotate_x_deg else None
        return cls(tuple(left), out, rot)

    @property
    def name(self):
        return f"{''.join(self.input_axes)}-{self.output_axis}"

    @property
    def tag(self):
        """Filename-safe identifier, e.g. ``xz-y_rotx45``."""
        if self.pre_rotation is None:
            return self.name
        return f"{self.name}_rot{self.pre_rotation[0]}{self.pre_rotation[1]:g}"

    @property
    def label(self):
        s = f"({','.join(self.input_axes)})->{self.output_axis}"
        if self.pre_rotation is not None:
            s += f" rot{self.pre_rotation[0]}{self.pre_rotation[1]:g}"
        return s

    def to_dict(self):
        return {
            "input_axes": list(self.input_axes),
            "output_axis": self.output_axis,
            "pre_rotation": list(self.pre_rotation) if self.pre_rotation else None,
        }

    @classmethod
    def from_dict(cls, d):
        rot = d.get("pre_rotation")
        return cls(tuple(d["input_axes"]), d["output_axis"], tuple(rot) if rot else None)


TABLE_SCENARIOS = (
    Scenario(("x", "y"), "z"),
    Scenario(("x", "z"), "y"),
    Scenario(("x", "z"), "y", ("x", 45.0)),
    Scenario(("z", "y"), "x"),
)


# --- alignment ---------------------------------------------------------------


def _align_arrays(coords, i_nose, i_tail):
    """coords (..., K, 3) -> aligned copy."""
    out = np.array(coords, dtype=np.float64, copy=True)
    centroid = out[..., :, :2].mean(axis=-2, keepdims=True)
    out[..., :, :2] -= centroid
    vec = out[..., i_nose, :2] - out[..., i_tail, :2]
    norm = np.hypot(vec[..., 0], vec[..., 1])
    if np.any(norm == 0):
        raise DegeneratePoseError("nose and tailbase coincide in (x, y); heading undefined")
    c = (vec[..., 0] / norm)[..., None]
    s = (vec[..., 1] / norm)[..., None]
    x, y = out[..., :, 0].copy(), out[..., :, 1].copy()
    # rotate by -heading so the tailbase->nose vector lands on +x
    out[..., :, 0] = c * x + s * y
    out[..., :, 1] = -s * x + c * y
    return out


def egocentric_align(frame, nose="nose", tailbase="tailbase"):
    names = list(frame.coords)
    if nose not in frame.coords or tailbase not in frame.coords:
        raise ValidationError(f"frame lacks {nose!r} or {tailbase!r}")
    coords = np.array([frame.coords[k] for k in names])
    out = _align_arrays(coords, names.index(nose), names.index(tailbase))
    return Pose3DFrame(
        frame.frame_index,
        {k: tuple(float(c) for c in out[i]) for i, k in enumerate(names)},
        dict(frame.z_provenance),
    )


def align_sequence(seq, nose="nose", tailbase="tailbase"):
    names = seq.keypoint_names
    if nose not in names or tailbase not in names:
        raise ValidationError(f"sequence lacks {nose!r} or {tailbase!r}")
    return seq.with_coords(_align_arrays(seq.coords, names.index(nose), names.index(tailbase)))


# --- rotation and scenarios --------------------------------------------------


def rotation_matrix(axis, degrees):
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    if axis == "z":
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    raise ValidationError(f"rotation axis must be x, y or z, got {axis!r}")


def rotate_sequence(seq, axis, degrees):
    r = rotation_matrix(axis, degrees)
    return seq.with_coords(seq.coords @ r.T)


def make_scenario(seq, scenario):
    """Per-frame inputs (F, 2K) interleaved per keypoint, targets (F, K)."""
    if len(seq) == 0:
        raise ValidationError("empty sequence")
    if scenario.pre_rotation is not None:
        seq = rotate_sequence(seq, *scenario.pre_rotation)
    cols = [AXES.index(a) for a in scenario.input_axes]
    inputs = seq.coords[:, :, cols].reshape(len(seq), -1)
    targets = seq.coords[:, :, AXES.index(scenario.output_axis)].copy()
    return inputs, targets


def column_labels(keypoint_names, scenario):
    inputs = [(kp, a) for kp in keypoint_names for a in scenario.input_axes]
    targets = [(kp, scenario.output_axis) for kp in keypoint_names]
    return inputs, targets


# --- standardization ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Standardizer:
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray
    input_labels: tuple = ()
    target_labels: tuple = ()

    def apply_inputs(self, x):
        return (x - self.input_mean) / self.input_std

    def apply_targets(self, y):
        return (y - self.target_mean) / self.target_std

    def invert_inputs(self, x):
        return x * self.input_std + self.input_mean

    def invert_targets(self, y):
        return y * self.target_std + self.target_mean

    def to_dict(self):
        return {
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
            "input_labels": [list(l) for l in self.input_labels],
            "target_labels": [list(l) for l in self.target_labels],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["input_mean"], dtype=np.float64),
            np.asarray(d["input_std"], dtype=np.float64),
            np.asarray(d["target_mean"], dtype=np.float64),
            np.asarray(d["target_std"], dtype=np.float64),
            tuple(tuple(l) for l in d.get("input_labels", ())),
            tuple(tuple(l) for l in d.get("target_labels", ())),
        )


def _stats(x, labels, what):
    x = np.asarray(x, dtype=np.float64).reshape(-1, np.shape(x)[-1])
    if x.shape[0] < 2:
        raise ValidationError(f"need at least 2 {what} samples to standardize, got {x.shape[0]}")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        name = labels[bad[0]] if labels else int(bad[0])
        raise ValidationError(f"zero variance in {what} series {name}")
    return mean, std


def fit_standardizer(train_inputs, train_targets, input_labels=(), target_labels=()):
    """Per-column mean/std (population) from training data only.

    Temporal inputs (samples, window, 2K) are pooled over the window axis.
    """
    im, isd = _stats(train_inputs, input_labels, "input")
    tm, tsd = _stats(train_targets, target_labels, "target")
    return Standardizer(im, isd, tm, tsd, tuple(input_labels), tuple(target_labels))


def apply_standardizer(st, split):
    return DatasetSplit(
        st.apply_inputs(split.train_inputs),
        st.apply_targets(split.train_targets),
        st.apply_inputs(split.test_inputs),
        st.apply_targets(split.test_targets),
        split.seed,
        split.train_index,
        split.test_index,
        split.window,
    )


def invert_standardizer(st, targets):
    return st.invert_targets(targets)


# --- splits ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train_inputs: np.ndarray
    train_targets: np.ndarray
    test_inputs: np.ndarray
    test_targets: np.ndarray
    seed: int
    # start frame of each sample's chunk (chunk length = window)
    train_index: np.ndarray = field(default=None)
    test_index: np.ndarray = field(default=None)
    window: int = 1

    @property
    def n_train(self):
        return self.train_inputs.shape[0]

    @property
    def n_test(self):
        return self.test_inputs.shape[0]


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def chunk_split_shuffle(inputs, targets, window, test_fraction, seed):
    """Non-overlapping window chunks, shuffled, first ceil(f * n) go to test.

    With window > 1 each sample's input is (window, 2K) and its target the
    centre frame's target; with window 1 samples are single frames.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if window < 1 or window % 2 == 0:
        raise ValidationError(f"window must be odd and >= 1, got {window}")
    if not 0 < test_fraction < 1:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n_frames = inputs.shape[0]
    if targets.shape[0] != n_frames:
        raise ValidationError("inputs and targets disagree on frame count")
    if n_frames < window:
        raise ValidationError(f"{n_frames} frames is fewer than the window {window}")
    n_chunks = n_frames // window
    order = _rng(seed).permutation(n_chunks)
    n_test = math.ceil(test_fraction * n_chunks)
    if n_test >= n_chunks:
        raise ValidationError(f"only {n_chunks} chunk(s): cannot leave a non-empty training set")
    test_starts = np.sort(order[:n_test]) * window
    train_starts = order[n_test:] * window

    def gather(starts):
        if window == 1:
            return inputs[starts], targets[starts]
        idx = starts[:, None] + np.arange(window)[None, :]
        return inputs[idx], targets[starts + window // 2]

    tr_x, tr_y = gather(train_starts)
    te_x, te_y = gather(test_starts)
    return DatasetSplit(tr_x, tr_y, te_x, te_y, int(seed), train_starts, test_starts, window)


def frame_split_shuffle(inputs, targets, test_fraction, seed):
    return chunk_split_shuffle(inputs, targets, 1, test_fraction, seed)
