import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from liftpose import kernels
from oracles import ewma_fill_loop

BACKENDS = kernels.available_backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def both():
    return kernels.get_backend("python"), kernels.get_backend("cython")


@needs_cython
@given(st.integers(1, 200), st.floats(0.01, 1.0), st.integers(0, 2**32), st.booleans())
def test_ewma_backends_identical(n, alpha, seed, reverse):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=n)
    present = rng.random(n) < 0.7
    present[rng.integers(n)] = True
    py, cy = both()
    assert np.array_equal(py.ewma_pass(vals, present, alpha, reverse), cy.ewma_pass(vals, present, alpha, reverse), equal_nan=True)
    filled = cy.ewma_fill(np.where(present, vals, 0.0), present, alpha)
    assert np.array_equal(py.ewma_fill(np.where(present, vals, 0.0), present, alpha), filled)
    series = [float(v) if p else None for v, p in zip(vals, present)]
    assert np.allclose(filled, ewma_fill_loop(series, alpha), rtol=1e-12, atol=1e-12)


@needs_cython
@given(
    st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10),
    st.integers(0, 2**32),
)
def test_im2col_col2im_backends_identical(n, c, k, s, d, extra, seed):
    rng = np.random.default_rng(seed)
    t = (k - 1) * d + 1 + extra
    t_out = (t - (k - 1) * d - 1) // s + 1
    x = rng.normal(size=(n, c, t))
    py, cy = both()
    cols = py.im2col_1d(x, k, s, d, t_out)
    assert np.array_equal(cols, cy.im2col_1d(x, k, s, d, t_out))
    back = rng.normal(size=cols.shape)
    assert np.array_equal(py.col2im_1d(back, t, s, d), cy.col2im_1d(back, t, s, d))
    # adjointness: <im2col x, y> == <x, col2im y>
    assert np.isclose(np.sum(cols * back), np.sum(x * py.col2im_1d(back, t, s, d)), rtol=1e-12, atol=1e-12)


@needs_cython
@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 2**32))
def test_horner_backends_identical(dv, dd, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(dv + 1, dd + 1))
    v, d = rng.uniform(-3, 3, 50), rng.uniform(0.1, 3, 50)
    py, cy = both()
    got = py.horner2d(c, v, d)
    assert np.array_equal(got, cy.horner2d(c, v, d))
    direct = sum(c[i, j] * v**i * d**j for i in range(dv + 1) for j in range(dd + 1))
    assert np.allclose(got, direct, rtol=1e-12, atol=1e-10)


def test_strided_fast_path_matches_gather(rng):
    x = rng.normal(size=(2, 3, 12))
    fast = kernels.get_backend("python").im2col_1d(x, 3, 3, 1, 4)
    idx = (np.arange(4) * 3)[:, None] + np.arange(3)[None, :]
    assert np.array_equal(fast, x[:, :, idx].transpose(0, 2, 1, 3))


def test_use_backend_rebinds():
    original = kernels.BACKEND
    try:
        kernels.use_backend("python")
        assert kernels.BACKEND == "python" and kernels.horner2d is kernels.get_backend("python").horner2d
    finally:
        kernels.use_backend(original)
    with pytest.raises(ValueError, match="unknown kernel backend"):
        kernels.use_backend("fortran")


def test_fallback_selected_when_extension_missing():
    code = (
        "import sys; sys.modules['liftpose._ckernels'] = None\n"
        "from liftpose import kernels\n"
        "print(kernels.BACKEND, kernels.available_backends())\n"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    assert out.strip() == "python ['python']"
