"""Polynomial height calibration for side cameras.

A side camera sees a marker at vertical pixel ``v``; together with the planar
distance ``d`` from the marker to the camera, a bivariate polynomial
``z = sum_ij c[i, j] v**i d**j`` gives the physical height in mm.
"""

from dataclasses import dataclass, field
from math import comb
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .errors import FitError, IllConditionedError, ValidationError

MAX_CONDITION = 1e12
# evaluation further than this fraction of the fitted span outside the
# sample bounding box is flagged as extrapolation
HULL_MARGIN = 0.1


@dataclass(frozen=True)
class CalibrationSample:
    v_px: float
    distance_mm: float
    z_mm: float

    def __post_init__(self):
        if not self.distance_mm > 0:
            raise ValidationError(f"calibration distance must be > 0, got {self.distance_mm}")


@dataclass(frozen=True, eq=False)
class PolySurface:
    calibration_id: str
    degree_v: int
    degree_d: int
    coefficients: np.ndarray
    fit_rms_mm: float = 0.0
    v_range: tuple = None
    d_range: tuple = None

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64)
        if self.degree_v < 0 or self.degree_d < 0:
            raise ValidationError("polynomial degrees must be >= 0")
        if c.shape != (self.degree_v + 1, self.degree_d + 1):
            raise ValidationError(
                f"coefficient array must be {(self.degree_v + 1, self.degree_d + 1)}, got {c.shape}"
            )
        if not self.fit_rms_mm >= 0:
            raise ValidationError(f"fit_rms_mm must be >= 0, got {self.fit_rms_mm}")
        c.flags.writeable = False
        object.__setattr__(self, "coefficients", c)

    def __eq__(self, other):
        if not isinstance(other, PolySurface):
            return NotImplemented
        return (
            self.calibration_id == other.calibration_id
            and np.array_equal(self.coefficients, other.coefficients)
            and self.fit_rms_mm == other.fit_rms_mm
        )

    def to_dict(self):
        d = {
            "calibration_id": self.calibration_id,
            "degree_v": self.degree_v,
            "degree_d": self.degree_d,
            "coefficients": [float(x) for x in self.coefficients.ravel()],
            "fit_rms_mm": float(self.fit_rms_mm),
        }
        if self.v_range is not None:
            d["v_range"] = [float(x) for x in self.v_range]
        if self.d_range is not None:
            d["d_range"] = [float(x) for x in self.d_range]
        return d

    @classmethod
    def from_dict(cls, d):
        dv, dd = int(d["degree_v"]), int(d["degree_d"])
        coeffs = np.asarray(d["coefficients"], dtype=np.float64)
        if coeffs.size != (dv + 1) * (dd + 1):
            raise ValueError(
                f"surface {d['calibration_id']!r}: {coeffs.size} coefficients for degrees ({dv}, {dd})"
            )
        return cls(
            calibration_id=str(d["calibration_id"]),
            degree_v=dv,
            degree_d=dd,
            coefficients=coeffs.reshape(dv + 1, dd + 1),
            fit_rms_mm=float(d.get("fit_rms_mm", 0.0)),
            v_range=tuple(d["v_range"]) if "v_range" in d else None,
            d_range=tuple(d["d_range"]) if "d_range" in d else None,
        )

    @classmethod
    def constant(cls, value, calibration_id="const"):
        return cls(calibration_id, 0, 0, np.array([[float(value)]]))


class Evaluation(NamedTuple):
    z_mm: object
    extrapolated: object


def design_matrix(v, d, degree_v, degree_d):
    """Monomial columns v**i d**j in row-major (i, j) order."""
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    pv = v[:, None] ** np.arange(degree_v + 1)[None, :]
    pd = d[:, None] ** np.arange(degree_d + 1)[None, :]
    return (pv[:, :, None] * pd[:, None, :]).reshape(len(v), -1)


def _affine(x):
    lo, hi = float(np.min(x)), float(np.max(x))
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    return centre, (half if half > 0 else 1.0)


def _expansion(centre, scale, degree):
    """T[i, k] = coefficient of x**i in ((x - centre) / scale)**k."""
    t = np.zeros((degree + 1, degree + 1))
    for k in range(degree + 1):
        for i in range(k + 1):
            t[i, k] = comb(k, i) * (-centre) ** (k - i) / scale**k
    return t


def fit_poly_surface(samples, degree_v=2, degree_d=2, calibration_id="cam"):
    """Least-squares fit of a calibration surface.

    The fit is solved by Householder QR in a centred and scaled basis, with one
    step of iterative refinement, then mapped back to raw monomial
    coefficients.
    """
    if degree_v < 0 or degree_d < 0:
        raise FitError("polynomial degrees must be >= 0")
    n_coef = (degree_v + 1) * (degree_d + 1)
    samples = list(samples)
    if len(samples) < n_coef:
        raise FitError(
            f"underdetermined: {len(samples)} samples for {n_coef} coefficients "
            f"(degrees {degree_v}, {degree_d})"
        )
    v = np.array([s.v_px for s in samples], dtype=np.float64)
    d = np.array([s.distance_mm for s in samples], dtype=np.float64)
    z = np.array([s.z_mm for s in samples], dtype=np.float64)
    for name, x, deg in (("v", v, degree_v), ("distance", d, degree_d)):
        distinct = np.unique(x).size
        if deg > 0 and distinct < 2:
            raise FitError(f"underdetermined: samples span {distinct} distinct {name} value(s) for degree {deg}")

    cv, sv = _affine(v)
    cd, sd = _affine(d)
    a = design_matrix((v - cv) / sv, (d - cd) / sd, degree_v, degree_d)
    col = np.linalg.norm(a, axis=0)
    if np.any(col == 0):
        raise FitError("underdetermined: design matrix has an all-zero column")
    a_s = a / col
    q, r = np.linalg.qr(a_s, mode="reduced")
    sing = np.linalg.svd(r, compute_uv=False)
    if sing[-1] <= sing[0] * max(a.shape) * np.finfo(float).eps:
        raise FitError(
            f"underdetermined: design matrix is rank deficient for degrees ({degree_v}, {degree_d}); "
            "add samples at more distinct heights/distances"
        )
    cond = sing[0] / sing[-1]
    if cond > MAX_CONDITION:
        raise IllConditionedError(
            f"design matrix condition estimate {cond:.3g} exceeds {MAX_CONDITION:.0e}; reduce the polynomial degree"
        )
    x = solve_triangular(r, q.T @ z)
    x = x + solve_triangular(r, q.T @ (z - a_s @ x))
    c_norm = (x / col).reshape(degree_v + 1, degree_d + 1)
    coeffs = _expansion(cv, sv, degree_v) @ c_norm @ _expansion(cd, sd, degree_d).T

    resid = kernels.horner2d(coeffs, v, d) - z
    rms = float(np.sqrt(np.mean(resid**2)))
    return PolySurface(
        calibration_id=calibration_id,
        degree_v=degree_v,
        degree_d=degree_d,
        coefficients=coeffs,
        fit_rms_mm=rms,
        v_range=(float(v.min()), float(v.max())),
        d_range=(float(d.min()), float(d.max())),
    )


def _outside(x, rng):
    if rng is None:
        return np.zeros(np.shape(x), dtype=bool)
    lo, hi = rng
    margin = HULL_MARGIN * (hi - lo)
    return (x < lo - margin) | (x > hi + margin)


def eval_poly(surface, v_px, distance_mm):
    """Evaluate the surface; returns ``Evaluation(z_mm, extrapolated)``.

    Scalars in give scalars out; arrays broadcast.
    """
    scalar = np.ndim(v_px) == 0 and np.ndim(distance_mm) == 0
    v = np.asarray(v_px, dtype=np.float64)
    d = np.asarray(distance_mm, dtype=np.float64)
    z = kernels.horner2d(surface.coefficients, v, d)
    extra = _outside(v, surface.v_range) | _outside(d, surface.d_range)
    if scalar:
        return Evaluation(float(z), bool(extra))
    return Evaluation(z, extra)


def fit_rms(surface, samples):
    z = np.array([s.z_mm for s in samples])
    v = np.array([s.v_px for s in samples])
    d = np.array([s.distance_mm for s in samples])
    return float(np.sqrt(np.mean((eval_poly(surface, v, d).z_mm - z) ** 2)))


def invert_v(surface, z_mm, distance_mm, v_lo, v_hi, tol=1e-13, max_iter=200):
    """Solve eval(v, d) = z for v on [v_lo, v_hi] (vectorised bisection + Newton).

    Raises ValueError when the surface is not monotone in v over the bracket
    for some requested (z, d).
    """
    z = np.asarray(z_mm, dtype=np.float64)
    d = np.broadcast_to(np.asarray(distance_mm, dtype=np.float64), z.shape)
    lo = np.full(z.shape, float(v_lo))
    hi = np.full(z.shape, float(v_hi))
    f_lo = kernels.horner2d(surface.coefficients, lo, d) - z
    f_hi = kernels.horner2d(surface.coefficients, hi, d) - z
    if np.any(np.sign(f_lo) == np.sign(f_hi)):
        raise ValueError("target height not bracketed by the pixel search range")
    rising = f_hi > f_lo
    # dz/dv coefficients for Newton polishing
    dcoef = surface.coefficients[1:] * np.arange(1, surface.degree_v + 1)[:, None]
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = kernels.horner2d(surface.coefficients, mid, d) - z
        go_up = (f_mid < 0) == rising
        lo = np.where(go_up, mid, lo)
        hi = np.where(go_up, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(mid))):
            break
    v = 0.5 * (lo + hi)
    if dcoef.size:
        for _ in range(3):
            slope = kernels.horner2d(dcoef, v, d)
            if np.any(slope == 0):
                break
            v = v - (kernels.horner2d(surface.coefficients, v, d) - z) / slope
    return v
