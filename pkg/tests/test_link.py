"""Shifted softplus link: values, inverse, derivatives, growth-rate helper."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from randsum import (
    LinkSpec,
    relative_growth_limit,
    softplus,
    softplus_deriv,
    softplus_inverse,
)


def test_softplus_closed_forms():
    assert_allclose(softplus(0.0, 0.0), math.log(2.0), rtol=1e-15)
    assert_allclose(softplus(0.5, -50.0), math.log(1.5), rtol=1e-12)


def test_softplus_large_argument_matches_extended_precision():
    # log(1.5 + exp(30)) evaluated at 60 significant digits rounds to this double
    assert softplus(0.5, 30.0) == 30.000000000000142


def test_softplus_branch_is_continuous():
    below = softplus(0.5, 30.0 - 1e-9)
    above = softplus(0.5, 30.0 + 1e-9)
    assert abs(above - below) < 1e-8


def test_softplus_vectorizes():
    x = np.array([-40.0, -1.0, 0.0, 1.0, 45.0])
    out = softplus(0.25, x)
    assert out.shape == x.shape
    for xi, oi in zip(x, out):
        assert oi == softplus(0.25, float(xi))


def test_softplus_rejects_bad_input():
    with pytest.raises(ValueError):
        softplus(0.5, float("nan"))
    with pytest.raises(ValueError):
        softplus(0.5, float("inf"))
    with pytest.raises(ValueError):
        softplus(-0.1, 0.0)


def test_softplus_lower_bound():
    # never below log(1 + delta); strictly above whenever the gap
    # e^x / (1 + delta) is resolvable in double precision.  The bound is
    # evaluated with np.log1p, the same function the package uses, since
    # libm and numpy can disagree by one ulp in the last place.
    rng = np.random.default_rng(20240811)
    for _ in range(200):
        delta = float(rng.uniform(0.0, 4.0))
        x = float(rng.uniform(-700.0, 700.0))
        val = softplus(delta, x)
        bound = float(np.log1p(delta))
        assert val >= bound
        if x > -30.0:
            assert val > bound


def test_softplus_monotone_in_x_and_delta():
    xs = np.linspace(-35.0, 35.0, 301)
    vals = softplus(0.5, xs)
    assert np.all(np.diff(vals) > 0)
    deltas = np.linspace(0.0, 3.0, 61)
    at_x = np.array([softplus(float(d), 1.2) for d in deltas])
    assert np.all(np.diff(at_x) > 0)


def test_softplus_is_1_lipschitz():
    rng = np.random.default_rng(7)
    for _ in range(300):
        delta = float(rng.uniform(0.0, 3.0))
        x, y = rng.uniform(-100.0, 100.0, size=2)
        gap = abs(softplus(delta, float(x)) - softplus(delta, float(y)))
        assert gap <= abs(x - y) + 1e-12


def test_inverse_closed_form_and_roundtrip():
    assert_allclose(softplus_inverse(0.0, math.log(2.0)), 0.0, atol=1e-15)
    assert_allclose(softplus_inverse(0.5, softplus(0.5, 1.3)), 1.3, atol=1e-12)


def test_inverse_domain_error():
    with pytest.raises(ValueError):
        softplus_inverse(0.5, 0.3)  # 0.3 < log(1.5)
    with pytest.raises(ValueError):
        softplus_inverse(0.0, 0.0)


def test_roundtrip_grid():
    """|inverse(link(x)) - x| < 1e-10 wherever lam carries the information.

    Near the lower bound the double representation of lam itself caps the
    recovery accuracy at about eps * lam * (1 + delta) / e^x, so each
    delta's sweep starts where that floor sits two orders below the
    asserted tolerance; delta = 0 keeps full relative precision all the
    way down.
    """
    cases = [(0.0, -30.0), (1e-4, -18.0), (0.5, -10.0), (3.0, -8.0)]
    for delta, lo in cases:
        xs = np.linspace(lo, 30.0, 250)
        back = softplus_inverse(delta, softplus(delta, xs))
        assert np.max(np.abs(back - xs)) < 1e-10


def test_roundtrip_near_the_bound_is_representation_limited():
    # at delta=0.5, x=-29.5 the link value sits ~1.5e-13 above log(1.5);
    # doubles there resolve x only to ~5e-4, and the inverse stays within
    # a small multiple of that floor
    delta, x = 0.5, -29.5
    lam = softplus(delta, x)
    floor = np.spacing(lam) * (1.0 + delta) / math.exp(x)
    err = abs(softplus_inverse(delta, lam) - x)
    assert err < 8.0 * floor


def test_roundtrip_far_outside_the_branch_point():
    for x in (120.0, 500.0):
        assert_allclose(softplus_inverse(0.5, softplus(0.5, x)), x, rtol=1e-14)


def test_deriv_closed_forms():
    d_eta, d_delta = softplus_deriv(0.0, 0.0)
    assert_allclose(d_eta, 0.5, rtol=1e-15)
    assert_allclose(d_delta, 0.5, rtol=1e-15)
    d_eta, d_delta = softplus_deriv(0.5, 0.0)
    assert_allclose(d_eta, 0.4, rtol=1e-14)
    assert_allclose(d_delta, 0.4, rtol=1e-14)


def test_deriv_identity_tight():
    # d_eta + (1 + delta) * d_delta = 1 holds to one ulp by construction
    rng = np.random.default_rng(3)
    for _ in range(100):
        delta = float(rng.uniform(0.0, 5.0))
        x = rng.uniform(-60.0, 60.0, size=50)
        d_eta, d_delta = softplus_deriv(delta, x)
        assert np.max(np.abs(d_eta + (1.0 + delta) * d_delta - 1.0)) <= 5e-16


def test_deriv_bounds():
    # open-interval bounds, on the range where they are representable
    # (1 / (1 + e^{-t}) rounds to exactly 1.0 once t passes ~36)
    rng = np.random.default_rng(11)
    for _ in range(200):
        delta = float(rng.uniform(0.0, 4.0))
        x = float(rng.uniform(-34.0, 34.0))
        d_eta, d_delta = softplus_deriv(delta, x)
        assert 0.0 < d_eta < 1.0
        assert 0.0 < d_delta < 1.0


def test_deriv_matches_finite_differences():
    # atol floor covers the difference-quotient roundoff, about
    # eps * softplus / h, which dominates once the derivative is tiny
    h = 1e-6
    for delta in (1e-4, 0.2, 0.9, 2.5):
        for x in np.linspace(-10.0, 10.0, 21):
            d_eta, d_delta = softplus_deriv(delta, float(x))
            fd_eta = (softplus(delta, x + h) - softplus(delta, x - h)) / (2 * h)
            fd_delta = (softplus(delta + h, x) - softplus(delta - h, x)) / (2 * h)
            assert_allclose(d_eta, fd_eta, rtol=1e-6, atol=1e-8)
            assert_allclose(d_delta, fd_delta, rtol=1e-6, atol=1e-8)


def test_deriv_documented_point_against_finite_difference():
    h = 1e-7
    d_eta, _ = softplus_deriv(0.5, 2.0)
    fd = (softplus(0.5, 2.0 + h) - softplus(0.5, 2.0 - h)) / (2 * h)
    assert abs(d_eta - fd) < 1e-8


def test_growth_limit_closed_forms():
    assert relative_growth_limit(0.0, 10.0) == 1.0
    assert_allclose(relative_growth_limit(-0.1, 10.0), math.exp(-1.0), rtol=1e-15)


def test_growth_limit_is_the_limit_of_link_slope_ratios():
    """The ratio of link slopes at beta*(x+a) vs beta*x approaches
    exp(beta*a) as beta*x heads to minus infinity; check the numerical
    sequence settles on the closed form.
    """

    def slope_ratio(beta, a, x):
        num, _ = softplus_deriv(0.0, beta * (x + a))
        den, _ = softplus_deriv(0.0, beta * x)
        return num / den

    target = relative_growth_limit(0.05, 10.0)
    ratios = [slope_ratio(0.05, 10.0, x) for x in (-1e2, -1e3, -1e4)]
    gaps = [abs(r - target) for r in ratios]
    assert gaps[-1] < 1e-12 * target
    assert gaps[0] >= gaps[-1]

    target = relative_growth_limit(-0.1, 10.0)
    assert abs(slope_ratio(-0.1, 10.0, 1e3) - target) < 1e-12 * target


def test_linkspec_validation():
    spec = LinkSpec(delta=0.5)
    assert spec.delta_floor > 0
    with pytest.raises(ValueError):
        LinkSpec(delta=-0.2)
    with pytest.raises(ValueError):
        LinkSpec(delta=0.5, delta_floor=0.0)
