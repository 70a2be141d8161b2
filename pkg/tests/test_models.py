import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from liftpose.errors import CheckpointError, ShapeError, UnsupportedWindowError, ValidationError
from liftpose.models import (
    LinearModelSpec,
    TemporalModelSpec,
    build_linear,
    build_model,
    build_temporal,
    forward_dilated,
    gradcheck_suite,
    linear_param_count,
    load_checkpoint,
    param_count,
    save_checkpoint,
    supported_windows,
    temporal_param_count,
    window_to_widths,
)
from oracles import linear_count, temporal_count

EQUIV_WIDTHS = [(3,), (3, 3), (3, 5), (3, 3, 3)]


def randomize_bn(model, rng):
    """Non-trivial running statistics so eval mode is a real affine map."""
    for layer in model.layers():
        if hasattr(layer, "running_var"):
            layer.running_mean[...] = rng.normal(0, 0.1, layer.running_mean.shape)
            layer.running_var[...] = rng.uniform(0.5, 1.5, layer.running_var.shape)
            layer.gamma.value[...] = rng.uniform(0.5, 1.5, layer.gamma.value.shape)
            layer.beta.value[...] = rng.normal(0, 0.1, layer.beta.value.shape)


def test_closed_form_counts():
    assert linear_param_count(16, 8, 1024) == 2_130_952 == linear_count(8, 1024)
    assert temporal_param_count(16, 8, (3, 3, 3, 3, 3), 1024) == 16_862_216 == temporal_count(8, 1024, (3,) * 5)
    assert temporal_param_count(16, 8, (3, 5), 1024) == 6_358_024 == temporal_count(8, 1024, (3, 5))


@pytest.mark.parametrize("widths", [(3,), (3, 5), (3, 3, 3), (5, 5)])
@pytest.mark.parametrize("channels", [4, 16])
def test_built_counts_match_oracle(widths, channels):
    t = build_temporal(TemporalModelSpec(6, 3, widths, channels), seed=1)
    assert param_count(t) == temporal_count(3, channels, widths)
    assert param_count(build_temporal(TemporalModelSpec(6, 3, widths, channels), seed=2)) == param_count(t)
    for blocks in (1, 2):
        lin = build_linear(LinearModelSpec(6, 3, channels, blocks), seed=1)
        assert param_count(lin) == linear_count(3, channels, blocks)


def test_window_to_widths():
    assert window_to_widths(243) == (3, 3, 3, 3, 3)
    assert window_to_widths(135) == (3, 3, 3, 5)
    assert window_to_widths(15) == (3, 5)
    assert window_to_widths(3) == (3,)
    for bad in (10, 1, 7, 0):
        with pytest.raises(UnsupportedWindowError, match="supported"):
            window_to_widths(bad)
    assert supported_windows(50) == [3, 5, 9, 15, 25, 27, 45]


def test_spec_validation():
    with pytest.raises(ValidationError):
        TemporalModelSpec(4, 2, (7,))
    with pytest.raises(ValidationError):
        LinearModelSpec(4, 2, hidden=0)


def test_linear_determinism_and_zero_fixture(rng):
    spec = LinearModelSpec(4, 2, 8)
    a, b = build_linear(spec, 5), build_linear(spec, 5)
    for p, q in zip(a.params(), b.params()):
        assert np.array_equal(p.value, q.value)
    assert any(not np.array_equal(p.value, q.value) for p, q in zip(a.params(), build_linear(spec, 6).params()))
    for p in a.params():
        if p.name.endswith(".W") or p.name.endswith(".b"):
            p.value[...] = 0
    a.eval()
    assert not a.forward(np.zeros((3, 4))).any()
    assert not a.forward(rng.normal(size=(3, 4))).any()


def test_temporal_strided_shapes(rng):
    m = build_temporal(TemporalModelSpec(4, 2, (3, 3, 3, 3, 3), 4), 0)
    assert m.forward(rng.normal(size=(2, 243, 4))).shape == (2, 2)
    with pytest.raises(ShapeError, match="243"):
        m.forward(rng.normal(size=(2, 245, 4)))
    with pytest.raises(ShapeError):
        m.forward_dilated(rng.normal(size=(100, 4)))


@pytest.mark.parametrize("widths", EQUIV_WIDTHS)
@pytest.mark.parametrize("seed", range(3))
def test_strided_dilated_equivalence(widths, seed):
    rng = np.random.default_rng(seed)
    m = build_temporal(TemporalModelSpec(4, 2, widths, 6), seed)
    randomize_bn(m, rng)
    m.eval()
    rf = m.receptive_field
    seq = rng.normal(size=(rf + 12, 4))
    dil = forward_dilated(m, seq)
    assert dil.shape == (13, 2)
    windows = np.stack([seq[t : t + rf] for t in range(13)])
    assert np.abs(m.forward(windows) - dil).max() < 1e-9
    single = m.forward_dilated(seq[:rf])
    assert single.shape == (1, 2) and np.abs(single - m.forward(seq[None, :rf])).max() < 1e-9


@given(st.integers(0, 2**32), st.sampled_from(EQUIV_WIDTHS), st.integers(0, 30))
def test_receptive_field_law(seed, widths, frame):
    rng = np.random.default_rng(seed)
    m = build_temporal(TemporalModelSpec(2, 1, widths, 3), seed).eval()
    rf = m.receptive_field
    seq = rng.normal(size=(rf + 30, 2))
    base = m.forward_dilated(seq)
    bumped = seq.copy()
    bumped[frame] += 10.0
    out = m.forward_dilated(bumped)
    for t in range(base.shape[0]):
        if not t <= frame < t + rf:
            assert np.array_equal(out[t], base[t])


def test_residual_skip_is_decimation(rng):
    m = build_temporal(TemporalModelSpec(4, 2, (3, 3), 5), 0)
    for a, b in m.blocks:
        for unit in (a, b):
            unit.op.W.value[...] = 0
            unit.op.b.value[...] = 0
    m.eval()
    x = rng.normal(size=(2, 9, 4))
    h = m.input.forward(np.ascontiguousarray(x.transpose(0, 2, 1)))
    want = m.output.forward(h[:, :, 1::3])[:, :, 0]
    assert np.array_equal(m.forward(x), want)


def test_gradcheck_suite_small():
    for label, report in gradcheck_suite(seed=3, channels=8):
        assert report.max_rel_err < 1e-5, (label, str(report))


@pytest.mark.parametrize(
    "spec", [LinearModelSpec(4, 2, 8, 2), TemporalModelSpec(4, 2, (3, 5), 6)], ids=["linear", "temporal"]
)
def test_checkpoint_round_trip(tmp_path, rng, spec):
    m = build_model(spec, 9)
    randomize_bn(m, rng)
    m.eval()
    x = rng.normal(size=(3, 4)) if spec.kind == "linear" else rng.normal(size=(3, 15, 4))
    path = tmp_path / "m.lpck"
    save_checkpoint(path, m, {"note": "x"})
    back, meta = load_checkpoint(path)
    assert meta["note"] == "x" and meta["model"]["kind"] == spec.kind
    assert np.array_equal(back.forward(x), m.forward(x))
    save_checkpoint(tmp_path / "again.lpck", back, {"note": "x"})
    assert (tmp_path / "again.lpck").read_bytes() == path.read_bytes()


def test_checkpoint_layout_and_errors(tmp_path):
    m = build_linear(LinearModelSpec(2, 1, 2), 0)
    path = tmp_path / "m.lpck"
    save_checkpoint(path, m)
    data = path.read_bytes()
    assert data[:4] == b"LPCK"
    version, meta_len = struct.unpack("<IQ", data[4:16])
    assert version == 1
    (count,) = struct.unpack("<I", data[16 + meta_len : 20 + meta_len])
    assert count == len(m.state_tensors())
    (nlen,) = struct.unpack("<H", data[20 + meta_len : 22 + meta_len])
    assert data[22 + meta_len : 22 + meta_len + nlen] == b"input.linear.W"

    cases = {
        "magic": b"XXXX" + data[4:],
        "version": data[:4] + struct.pack("<I", 2) + data[8:],
        "truncated": data[:-5],
        "trailing": data + b"\0",
    }
    for label, blob in cases.items():
        bad = tmp_path / f"{label}.lpck"
        bad.write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
    # metadata of a 2-channel model followed by tensors of a 3-channel one
    other = tmp_path / "other.lpck"
    save_checkpoint(other, build_linear(LinearModelSpec(2, 1, 3), 0))
    o = other.read_bytes()
    (olen,) = struct.unpack("<Q", o[8:16])
    swapped = tmp_path / "swapped.lpck"
    swapped.write_bytes(data[: 16 + meta_len] + o[16 + olen :])
    with pytest.raises(CheckpointError, match="dims"):
        load_checkpoint(swapped)
