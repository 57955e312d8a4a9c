import math

import pytest

from kamtori import (DomainError, certified_frequency,
                     certify, max_alpha, quadratic_irrational_frequency,
                     small_divisor)

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def test_small_divisor():
    assert small_divisor((1, 0), (1.0, GOLDEN)) == pytest.approx(1.0)
    assert small_divisor((1, -1), (1.0, GOLDEN)) == pytest.approx(GOLDEN - 1.0)
    with pytest.raises(DomainError):
        small_divisor((0, 0), (1.0, GOLDEN))


def test_certify_golden():
    cert = certify((1.0, GOLDEN), 0.25, 1.2, K=120)
    assert cert.ok
    assert cert.K_verified == 120
    assert cert.worst_margin >= 1.0


def test_certify_rational_direction_fails():
    # omega = (1, 3/2): k = (3, -2) gives k.omega = 0
    cert = certify((1.0, 1.5), 0.25, 1.2, K=10)
    assert not cert.ok
    assert cert.counterexample in ((3, -2), (-3, 2))


def test_max_alpha_golden():
    # at K up to 200 the binding mode for (1, golden) keeps alpha_max = 1
    assert max_alpha((1.0, GOLDEN), 1.2, 200) == pytest.approx(1.0)
    # certify succeeds right below and fails right above the sharp constant
    assert certify((1.0, GOLDEN), 0.999999, 1.2, K=200).ok
    assert not certify((1.0, GOLDEN), 1.000001, 1.2, K=200).ok


def test_certified_frequency_bounds():
    fv = certified_frequency((1.0, GOLDEN), 1.2, 100, alpha=0.25)
    assert fv.alpha == 0.25
    assert fv.nu == pytest.approx(2.2)
    assert fv.K_verified == 100
    assert fv.ensure_verified(50) is fv
    extended = fv.ensure_verified(300)
    assert extended.K_verified >= 300
    bad = certified_frequency((1.0, 1.5), 1.2, 2, alpha=0.05)
    with pytest.raises(DomainError):
        bad.ensure_verified(10)   # hits the (3, -2) resonance


def test_certified_frequency_rejects_bad_alpha():
    with pytest.raises(DomainError):
        certified_frequency((1.0, 1.5), 1.2, 10, alpha=0.25)


def test_fixtures():
    assert quadratic_irrational_frequency(2) == (1.0, GOLDEN)
    v = quadratic_irrational_frequency(4)
    assert len(v) == 4
    cert = certify(v, 0.01, 3.0, K=20)
    assert cert.ok


def test_divisor_lower_bound_holds_on_scan():
    fv = certified_frequency((1.0, GOLDEN), 1.2, 60, alpha=0.25)
    # spot-check the certified inequality on a few modes
    for k in [(1, 0), (2, -1), (5, -3), (13, -8), (34, -21)]:
        norm = sum(abs(x) for x in k)
        if norm <= 60:
            assert small_divisor(k, fv.omega) >= 0.25 * norm ** -1.2
