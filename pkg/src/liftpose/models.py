"""Linear residual and temporal convolutional lift-pose models."""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CheckpointError, ShapeError, UnsupportedWindowError, ValidationError
from .nncore import BatchNorm, Conv1d, Dropout, Linear, ReLU, derive_seed, grad_check

SUPPORTED_WIDTHS = (3, 5)
DROPOUT_SEED_OFFSET = 10_000


@dataclass(frozen=True)
class LinearModelSpec:
    in_width: int
    out_width: int
    hidden: int = 1024
    n_blocks: int = 1
    dropout: float = 0.25

    kind = "linear"

    def __post_init__(self):
        if self.hidden < 1 or self.n_blocks < 1 or self.in_width < 1 or self.out_width < 1:
            raise ValidationError(f"invalid linear model spec {self}")


@dataclass(frozen=True)
class TemporalModelSpec:
    in_features: int
    out_features: int
    filter_widths: tuple
    channels: int = 1024
    dropout: float = 0.25

    kind = "temporal"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.filter_widths)
        if not widths or any(w not in SUPPORTED_WIDTHS for w in widths):
            raise ValidationError(f"filter widths must be non-empty and drawn from {SUPPORTED_WIDTHS}, got {widths}")
        if self.channels < 1:
            raise ValidationError("channels must be >= 1")
        object.__setattr__(self, "filter_widths", widths)

    @property
    def receptive_field(self):
        return int(np.prod(self.filter_widths))


def spec_to_dict(spec):
    d = asdict(spec)
    d["kind"] = spec.kind
    if "filter_widths" in d:
        d["filter_widths"] = list(d["filter_widths"])
    return d


def spec_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "linear":
        return LinearModelSpec(**d)
    if kind == "temporal":
        d["filter_widths"] = tuple(d["filter_widths"])
        return TemporalModelSpec(**d)
    raise ValidationError(f"unknown model kind {kind!r}")


def supported_windows(limit=243):
    out = []
    for w in range(3, limit + 1):
        r = w
        for p in SUPPORTED_WIDTHS:
            while r % p == 0:
                r //= p
        if r == 1:
            out.append(w)
    return out


def window_to_widths(window):
    """Factor a receptive field into kernel widths, 3s first then 5s."""
    if window >= 3:
        widths = []
        r = window
        for p in SUPPORTED_WIDTHS:
            while r % p == 0:
                widths.append(p)
                r //= p
        if r == 1:
            return tuple(widths)
    raise UnsupportedWindowError(
        f"window {window} must be >= 3 and factor into 3s and 5s; supported up to 243: {supported_windows()}"
    )


class _Unit:
    """op -> batchnorm -> relu -> dropout."""

    def __init__(self, op, bn, drop):
        self.op, self.bn, self.relu, self.drop = op, bn, ReLU(), drop
        self.layers = [op, bn, self.relu, drop]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def infer(self, x, dilation):
        # eval-mode semantics with a stride-1 dilated convolution
        y = self.op.forward(x, dilation=dilation, stride=1)
        bn = self.bn
        inv = (1.0 / np.sqrt(bn.running_var + bn.eps)).reshape(1, -1, 1)
        xhat = (y - bn.running_mean.reshape(1, -1, 1)) * inv
        y = xhat * bn.gamma.value.reshape(1, -1, 1) + bn.beta.value.reshape(1, -1, 1)
        return np.maximum(y, 0.0)


class LiftModel:
    spec = None

    def layers(self):
        raise NotImplementedError

    def params(self):
        return [p for layer in self.layers() for p in layer.params()]

    def state_tensors(self):
        """Parameters then batchnorm running stats, in declaration order."""
        out = [(p.name, p.value) for p in self.params()]
        for layer in self.layers():
            if isinstance(layer, BatchNorm):
                out.extend((f"{layer.name}.{suffix}", arr) for suffix, arr in layer.state())
        return out

    def param_count(self):
        return sum(p.size for p in self.params())

    def train(self, mode=True):
        for layer in self.layers():
            layer.train(mode)
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def set_bn_momentum(self, momentum):
        for layer in self.layers():
            if isinstance(layer, BatchNorm):
                layer.momentum = momentum

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


class LinearModel(LiftModel):
    def __init__(self, spec, seed):
        self.spec = spec
        c = spec.hidden
        counter = iter(range(1_000_000))

        def unit(name, n_in):
            i = next(counter)
            return _Unit(
                Linear(f"{name}.linear", n_in, c, derive_seed(seed, i)),
                BatchNorm(f"{name}.bn", c),
                Dropout(spec.dropout, derive_seed(seed, DROPOUT_SEED_OFFSET + i)),
            )

        self.input = unit("input", spec.in_width)
        self.blocks = [(unit(f"block{b}.a", c), unit(f"block{b}.b", c)) for b in range(spec.n_blocks)]
        self.output = Linear("output.linear", c, spec.out_width, derive_seed(seed, next(counter)))
        self.training = True

    def layers(self):
        out = list(self.input.layers)
        for a, b in self.blocks:
            out += a.layers + b.layers
        out.append(self.output)
        return out

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.spec.in_width:
            raise ShapeError(f"linear model expects (batch, {self.spec.in_width}), got {x.shape}")
        h = self.input.forward(x)
        for a, b in self.blocks:
            h = h + b.forward(a.forward(h))
        return self.output.forward(h)

    def backward(self, dy):
        dh = self.output.backward(dy)
        for a, b in reversed(self.blocks):
            dh = dh + a.backward(b.backward(dh))
        return self.input.backward(dh)


class TemporalModel(LiftModel):
    def __init__(self, spec, seed):
        self.spec = spec
        c = spec.channels
        widths = spec.filter_widths
        counter = iter(range(1_000_000))

        def unit(name, n_in, width):
            i = next(counter)
            return _Unit(
                Conv1d(f"{name}.conv", n_in, c, width, derive_seed(seed, i), stride=width),
                BatchNorm(f"{name}.bn", c),
                Dropout(spec.dropout, derive_seed(seed, DROPOUT_SEED_OFFSET + i)),
            )

        self.input = unit("input", spec.in_features, widths[0])
        self.blocks = [
            (unit(f"block{b}.a", c, w), unit(f"block{b}.b", c, 1)) for b, w in enumerate(widths[1:])
        ]
        self.output = Conv1d("output.conv", c, spec.out_features, 1, derive_seed(seed, next(counter)))
        self.training = True

    @property
    def receptive_field(self):
        return self.spec.receptive_field

    def layers(self):
        out = list(self.input.layers)
        for a, b in self.blocks:
            out += a.layers + b.layers
        out.append(self.output)
        return out

    def _check(self, x):
        if x.ndim != 3 or x.shape[2] != self.spec.in_features:
            raise ShapeError(f"temporal model expects (batch, window, {self.spec.in_features}), got {x.shape}")

    def forward(self, x):
        """(batch, window, 2K) with window == receptive field -> (batch, K)."""
        self._check(x)
        if x.shape[1] != self.receptive_field:
            raise ShapeError(
                f"strided forward needs exactly {self.receptive_field} frames per window, got {x.shape[1]}"
            )
        h = self.input.forward(np.ascontiguousarray(x.transpose(0, 2, 1)))
        for (a, b), w in zip(self.blocks, self.spec.filter_widths[1:]):
            res = h[:, :, w // 2 :: w]
            h = res + b.forward(a.forward(h))
        out = self.output.forward(h)
        return out[:, :, 0]

    def backward(self, dy):
        dh = self.output.backward(dy[:, :, None])
        for (a, b), w in zip(reversed(self.blocks), reversed(self.spec.filter_widths[1:])):
            dx = a.backward(b.backward(dh))
            dx[:, :, w // 2 :: w] += dh
            dh = dx
        return self.input.backward(dh).transpose(0, 2, 1)

    def forward_dilated(self, seq):
        """Eval-mode predictions for every valid centre of a full sequence.

        ``seq`` is (frames, 2K) or (batch, frames, 2K); returns
        (frames - RF + 1, K) or (batch, frames - RF + 1, K).
        """
        single = np.ndim(seq) == 2
        x = np.asarray(seq, dtype=np.float64)
        if single:
            x = x[None]
        self._check(x)
        if x.shape[1] < self.receptive_field:
            raise ShapeError(f"sequence of {x.shape[1]} frames is shorter than the receptive field {self.receptive_field}")
        widths = self.spec.filter_widths
        h = self.input.infer(np.ascontiguousarray(x.transpose(0, 2, 1)), 1)
        dilation = widths[0]
        for (a, b), w in zip(self.blocks, widths[1:]):
            pad = (w - 1) * dilation // 2
            res = h[:, :, pad : h.shape[2] - pad]
            h = res + b.infer(a.infer(h, dilation), 1)
            dilation *= w
        out = self.output.forward(h, dilation=1, stride=1).transpose(0, 2, 1)
        return out[0] if single else out


def build_linear(spec, seed):
    return LinearModel(spec, seed)


def build_temporal(spec, seed):
    return TemporalModel(spec, seed)


def build_model(spec, seed):
    if isinstance(spec, dict):
        spec = spec_from_dict(spec)
    return build_linear(spec, seed) if spec.kind == "linear" else build_temporal(spec, seed)


def forward_dilated(model, seq):
    return model.forward_dilated(seq)


def param_count(model):
    return model.param_count()


def linear_param_count(in_width, out_width, hidden, n_blocks=1):
    """Closed-form count: weights, biases, BN gamma/beta."""
    unit = lambda n_in: n_in * hidden + hidden + 2 * hidden  # noqa: E731
    return unit(in_width) + n_blocks * 2 * unit(hidden) + hidden * out_width + out_width


def temporal_param_count(in_features, out_features, widths, channels):
    c = channels
    unit = lambda n_in, w: n_in * c * w + c + 2 * c  # noqa: E731
    total = unit(in_features, widths[0])
    for w in widths[1:]:
        total += unit(c, w) + unit(c, 1)
    return total + c * out_features + out_features


# --- checkpoints -------------------------------------------------------------

MAGIC = b"LPCK"
VERSION = 1


def save_checkpoint(path, model, metadata=None):
    meta = dict(metadata or {})
    meta["model"] = spec_to_dict(model.spec)
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = model.state_tensors()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: wanted {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Return (model, metadata) rebuilt from a checkpoint file."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = r.unpack("<IQ")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        spec = spec_from_dict(meta["model"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad metadata: {exc}") from None
    model = build_model(spec, seed=0)
    expected = model.state_tensors()
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise CheckpointError(f"{path}: {count} tensors, model declares {len(expected)}")
    for name, target in expected:
        (nlen,) = r.unpack("<H")
        got = r.take(nlen).decode("utf-8")
        if got != name:
            raise CheckpointError(f"{path}: expected tensor {name!r}, found {got!r}")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        if tuple(dims) != target.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has dims {dims}, model expects {target.shape}")
        data = np.frombuffer(r.take(8 * target.size), dtype="<f8").reshape(target.shape)
        target[...] = data
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    model.eval()
    return model, meta


def gradcheck_suite(seed=0, channels=8, keypoints=2, jitter=0.1):
    """Finite-difference check of both model kinds on random data.

    Parameters are jittered off their initial values first: zero biases put
    dead-input samples exactly on a ReLU kink, where central differences
    average two one-sided slopes. Batch sizes are odd so no output-bias
    gradient (a sum of signs) can vanish exactly.
    """
    rng = np.random.default_rng(derive_seed(seed, 777))
    n_in, n_out = 2 * keypoints, keypoints
    models = [
        ("linear", build_linear(LinearModelSpec(n_in, n_out, channels), seed), (7, n_in)),
        ("temporal", build_temporal(TemporalModelSpec(n_in, n_out, (3, 3), channels), seed), (5, 9, n_in)),
    ]
    out = []
    for label, model, shape in models:
        for p in model.params():
            p.value += rng.normal(0.0, jitter, p.value.shape)
        x = rng.normal(size=shape)
        y = rng.normal(size=(shape[0], n_out))
        out.append((label, grad_check(model, x, y)))
    return out
