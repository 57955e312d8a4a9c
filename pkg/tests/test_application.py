import math

import numpy as np
import pytest

from kamtori import (DomainError, IntegrableSystem, choose_radius,
                     parameterize, run_case, scaling_experiment,
                     torus_distance)
from kamtori.application import _fit_slope


def test_quadratic_system_anchor(golden_freq):
    sys_ = IntegrableSystem.quadratic(2)
    p0, dp0 = sys_.solve_anchor(np.array(golden_freq.omega))
    assert np.allclose(p0, golden_freq.omega, atol=1e-14)
    assert np.allclose(dp0, np.eye(2), atol=1e-14)


def test_nonquadratic_anchor_jet_finite_difference():
    sys_ = IntegrableSystem("p1**2/2 + p2**2/2 + p1**3/10", 2, 2.0)
    om = np.array([1.0, 1.6])
    p0, dp0 = sys_.solve_anchor(om)
    assert np.allclose(sys_.gradient(p0), om, atol=1e-12)
    h = 1e-6
    for j in range(2):
        omp = om.copy()
        omp[j] += h
        p0p, _ = sys_.solve_anchor(omp)
        fd = (p0p - p0) / h
        assert np.allclose(fd, dp0[:, j], atol=1e-5)


def test_parameterize_quadratic(golden_freq, benchmark_f_unit):
    sys_ = IntegrableSystem.quadratic(2)
    setup = parameterize(sys_, benchmark_f_unit.scale(1e-6), golden_freq,
                         0.025, 1.0, mode="theorem2")
    # e = |omega|^2 / 2 with jet omega
    om = np.array(golden_freq.omega)
    assert setup.N.e.value == pytest.approx(float(om @ om) / 2, rel=1e-14)
    assert np.allclose([complex(x).real for x in setup.N.e.domega], om,
                       atol=1e-14)
    # Q = |I|^2 / 2 exactly: purely quadratic, no linear or constant parts
    assert setup.Q.angle_average() is not None
    assert setup.Q.action_degree() == 2
    assert setup.Q.weighted_norm(0.025, 0.0) == pytest.approx(
        2 * 0.5 * 0.025 ** 2, rel=1e-14)
    for (k, m), _ in setup.Q.coeffs.items():
        assert sum(abs(x) for x in k) == 0 and sum(m) >= 2
    # theorem1 mode folds Q into P
    setup1 = parameterize(sys_, benchmark_f_unit.scale(1e-6), golden_freq,
                          0.025, 1.0, mode="theorem1")
    assert setup1.Q is None
    assert (setup1.P - setup.P - setup.Q).weighted_norm(0.025, 1.0) <= 1e-20


def test_parameterize_rejects_action_dependent_f(golden_freq):
    from kamtori import FourierTaylorSeries
    f = FourierTaylorSeries.action_monomial(2, (1, 0), 1e-6)
    sys_ = IntegrableSystem.quadratic(2)
    with pytest.raises(DomainError):
        parameterize(sys_, f, golden_freq, 0.025, 1.0)


def test_q_within_hessian_bound(golden_freq, benchmark_f_unit):
    # |Q| <= M r^2 on the domain for the quadratic system (M = 1)
    sys_ = IntegrableSystem.quadratic(2)
    r = 0.025
    setup = parameterize(sys_, benchmark_f_unit.scale(1e-8), golden_freq,
                         r, 1.0, mode="theorem2")
    assert setup.Q.weighted_norm(r, 0.0) <= sys_.M * r ** 2 * (1 + 1e-12)


def test_choose_radius():
    assert choose_radius("theorem1", 1e-6, 0.25, 1.0, 2.2) == pytest.approx(1e-3)
    assert choose_radius("theorem2", 1e-6, 0.25, 1.0, 2.2, delta=0.1) == \
        pytest.approx(0.025)
    # theorem2 radius is independent of eps
    assert choose_radius("theorem2", 1e-9, 0.25, 1.0, 2.2) == \
        choose_radius("theorem2", 1e-3, 0.25, 1.0, 2.2)
    with pytest.raises(DomainError):
        choose_radius("theorem3", 1e-6, 0.25, 1.0, 2.2)


def test_fit_slope_exact():
    eps = [1e-7, 1e-6, 1e-5]
    slope, se = _fit_slope(eps, [2 * e ** 0.5 for e in eps])
    assert slope == pytest.approx(0.5, abs=1e-12)
    assert se <= 1e-10


def test_run_case_modes_agree(golden_freq, benchmark_system, benchmark_f_unit):
    rows = {}
    for mode in ("theorem1", "theorem2"):
        row, setup, result, report = run_case(
            benchmark_system, benchmark_f_unit, golden_freq, 1.0, 1e-8, mode,
            max_iter=12, stop_tol=1e-10)
        rows[mode] = row
        assert row.residual <= 1e-9
        assert row.distance <= row.bound
    # the torus does not depend on the bookkeeping split of h into Q vs P
    assert rows["theorem1"].distance == pytest.approx(
        rows["theorem2"].distance, rel=1e-6)


def test_scaling_experiment_small(golden_freq, benchmark_system,
                                  benchmark_f_unit):
    res = scaling_experiment(benchmark_system, benchmark_f_unit, golden_freq,
                             1.0, [1e-8, 1e-7, 1e-6], modes=("theorem2",),
                             max_iter=12, stop_tol=1e-10, workers=2)
    assert all(r.feasible for r in res.rows)
    assert 0.9 <= res.slopes["theorem2"]["distance_slope"] <= 1.1
    assert res.slopes["theorem2"]["bound_slope"] == pytest.approx(1.0,
                                                                  abs=1e-12)
