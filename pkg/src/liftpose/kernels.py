"""Backend selection for the hot kernels.

The compiled extension ``liftpose._ckernels`` is used when it was built;
otherwise the numpy implementations in ``liftpose._pykernels`` are used.
Both expose the same functions with bit-identical results.
"""

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_NAMES = ("ewma_pass", "ewma_fill", "im2col_1d", "col2im_1d", "horner2d")

BACKEND = ""


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}") from None


def use_backend(name):
    """Rebind the module-level kernel functions to the named backend."""
    global BACKEND
    mod = get_backend(name)
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name


ewma_pass = ewma_fill = im2col_1d = col2im_1d = horner2d = None
use_backend("cython" if _ckernels is not None else "python")
