"""Shifted softplus link: the map x -> log(1 + delta + e^x) and friends.

The mean process of the model lives above log(1 + delta), and every module
that touches a mean value goes through the functions here, so the numerics
(overflow-safe branches, exact derivative identities) are concentrated in
one place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DELTA_FLOOR = 1e-4

# Switch to the asymptotic branch above this point: e^30 ~ 1e13 dwarfs
# 1 + delta, keeping the absolute error of either branch below ~1e-12.
_BRANCH_X = 30.0


@dataclass(frozen=True)
class LinkSpec:
    """Shift parameter ``delta`` plus the lower bound used during estimation.

    ``delta`` itself only needs to be nonnegative; estimation keeps it at or
    above ``delta_floor`` so the mean stays bounded away from zero.
    """

    delta: float
    delta_floor: float = DEFAULT_DELTA_FLOOR

    def __post_init__(self) -> None:
        if not (np.isfinite(self.delta_floor) and self.delta_floor > 0):
            raise ValueError(f"delta_floor must be a positive real, got {self.delta_floor}")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be a nonnegative real, got {self.delta}")


def _as_finite_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _check_delta(delta: float) -> float:
    if not (np.isfinite(delta) and delta >= 0):
        raise ValueError(f"delta must be a nonnegative real, got {delta}")
    return float(delta)


def softplus(delta: float, x):
    """Evaluate log(1 + delta + e^x), elementwise on arrays.

    Overflow-safe: for x above a branch point the value is computed as
    x + log1p((1 + delta) e^{-x}), which agrees with the direct form to
    full double precision.  The result never falls below log(1 + delta),
    and exceeds it strictly whenever the gap e^x / (1 + delta) is
    resolvable at the result's floating-point spacing (x above roughly
    -30 for moderate delta).

    Parameters
    ----------
    delta : float
        Nonnegative shift.
    x : float or array_like
        Finite input(s).

    Returns
    -------
    float or ndarray
        Scalar input gives a float, array input an array of the same shape.
    """
    delta = _check_delta(delta)
    arr = _as_finite_array(x, "x")
    low = np.log1p(delta + np.exp(np.minimum(arr, _BRANCH_X)))
    high = arr + np.log1p((1.0 + delta) * np.exp(-np.maximum(arr, _BRANCH_X)))
    out = np.where(arr > _BRANCH_X, high, low)
    return float(out) if out.ndim == 0 else out


def softplus_inverse(delta: float, lam):
    """Invert the link: return the x with softplus(delta, x) = lam.

    Only defined above the lower bound log(1 + delta); values at or below
    it raise a ValueError.  Accuracy note: just above the bound the double
    representation of lam itself limits how well x can be recovered (the
    spacing of doubles near log(1 + delta) swamps the gap e^x / (1 +
    delta)); the form used here stays within a small factor of that
    floor.
    """
    delta = _check_delta(delta)
    arr = _as_finite_array(lam, "lam")
    bound = np.log1p(delta)
    if np.any(arr <= bound):
        raise ValueError(
            f"softplus_inverse needs lam > log(1 + delta) = {bound:.6g}; "
            f"got minimum {arr.min():.6g}"
        )
    low = np.log(np.expm1(np.minimum(arr, _BRANCH_X)) - delta)
    high = arr + np.log1p(-(1.0 + delta) * np.exp(-np.maximum(arr, _BRANCH_X)))
    out = np.where(arr > _BRANCH_X, high, low)
    return float(out) if out.ndim == 0 else out


def softplus_deriv(delta: float, x):
    """Partial derivatives of softplus(delta, x).

    Returns the pair (d_eta, d_delta) with d_eta = e^x / (1 + delta + e^x)
    and d_delta = 1 / (1 + delta + e^x), both in (0, 1).  They satisfy
    d_eta + (1 + delta) * d_delta = 1 to within one ulp, because d_delta
    is computed from d_eta through that identity.
    """
    delta = _check_delta(delta)
    arr = _as_finite_array(x, "x")
    # Recentre so that d_eta is a plain logistic sigmoid of t, then use the
    # sign-split form that never exponentiates a positive argument.
    t = arr - np.log1p(delta)
    e = np.exp(-np.abs(t))
    d_eta = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    d_delta = (1.0 - d_eta) / (1.0 + delta)
    if d_eta.ndim == 0:
        return float(d_eta), float(d_delta)
    return d_eta, d_delta


def relative_growth_limit(beta_j: float, alpha: float) -> float:
    """Asymptotic multiplicative effect on the mean of raising covariate j by ``alpha``.

    Equals e^{beta_j * alpha}.  It is the limit of the ratio of link slopes
    at linear-predictor values beta_j*(x + alpha) and beta_j*x as the
    product beta_j*x heads to minus infinity, i.e. on the decaying side of
    the curve where the mean approaches its floor.  Reporting uses it to
    turn a fitted coefficient into statements like "an increase of alpha
    units multiplies expected growth by this factor".
    """
    return float(np.exp(beta_j * alpha))
