import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kamtori import (FourierTaylorSeries, NormalForm, ParameterDomainError,
                     ResonanceError, StepParams, certified_frequency,
                     frequency_correction, kam_step, kam_step_q,
                     poisson_bracket, russmann_truncate, solve_homological)
from kamtori.step import k_cutoff_formula
from conftest import random_real_series

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def _params(eps, r=1e-4, s=1.0, eta=0.1, sigma=0.05, h=1e-4, K=40):
    return StepParams(eta=eta, sigma=sigma, h=h, K=K, r=r, s=s, epsilon=eps)


def test_k_cutoff_formula():
    assert k_cutoff_formula(2, 0.1, 0.05) == pytest.approx(
        math.log(2 / 0.01) / 0.05, rel=1e-15)


def test_russmann_truncate_budget(golden_freq_short):
    rng = np.random.default_rng(11)
    for _ in range(20):
        P = random_real_series(rng, kmax=30, dmax=3, nterms=15)
        eps = P.weighted_norm(1e-3, 1.0)
        params = _params(eps, r=1e-3, K=40)
        R, err, K_used, formula_ok = russmann_truncate(P, params)
        assert err <= 8 * params.eta ** 2 * eps * (1 + 1e-12)
        assert R.fourier_degree() <= K_used
        assert R.action_degree() <= 1


def test_russmann_truncate_error_is_measured_majorant():
    P = FourierTaylorSeries.cosine(2, (3, 3), 1e-6)
    eps = P.weighted_norm(1e-3, 1.0)
    params = _params(eps, r=1e-3, K=2)
    R, err, K_used, formula_ok = russmann_truncate(P, params)
    # the |k|=6 mode survives only if the cutoff grew to cover it
    if K_used >= 6:
        assert err == 0.0
        assert (R - P).weighted_norm(1e-3, 1.0) == 0.0


def test_solve_homological_residual(golden_freq_short):
    rng = np.random.default_rng(12)
    N = NormalForm.linear(golden_freq_short)
    for _ in range(20):
        R = random_real_series(rng, kmax=8, dmax=1, nterms=10, d_cap=2)
        R = R - R.angle_average()
        F = solve_homological(R, N)
        res = poisson_bracket(F, N.to_series(2)) - R
        assert res.weighted_norm(0.4, 0.2) <= 1e-12 * max(
            R.weighted_norm(0.4, 0.2), 1e-300)


def test_solve_homological_resonance():
    fv = certified_frequency((1.0, 1.5), 1.2, 2, alpha=0.1)
    R = FourierTaylorSeries.cosine(2, (3, -2), 1.0)
    N = NormalForm.linear(fv)
    with pytest.raises((ResonanceError, Exception)):
        solve_homological(R, N)


def test_frequency_correction_linear_oracle(golden_freq_short):
    # [R] = c + v . I with constant coefficients: the anchor moves by exactly
    # -v and the anchored frequency is unchanged
    n = 2
    v = (3e-6, -2e-6)
    avgR = (FourierTaylorSeries.constant(n, 1e-7)
            + FourierTaylorSeries.action_monomial(n, (1, 0), v[0])
            + FourierTaylorSeries.action_monomial(n, (0, 1), v[1]))
    N = NormalForm.linear(golden_freq_short)
    N1, shift_jets, v_jet = frequency_correction(avgR, N, h=1e-4)
    assert tuple(N1.omega.omega) == tuple(N.omega.omega)
    shift = [complex(sj.value) for sj in shift_jets]
    assert shift[0].real == pytest.approx(-v[0], rel=1e-10)
    assert shift[1].real == pytest.approx(-v[1], rel=1e-10)
    assert N1.e.value == pytest.approx(1e-7, rel=1e-10)


def test_frequency_correction_rejects_large_shift(golden_freq_short):
    avgR = FourierTaylorSeries.action_monomial(2, (1, 0), 1.0)
    N = NormalForm.linear(golden_freq_short)
    with pytest.raises(ParameterDomainError):
        frequency_correction(avgR, N, h=1e-4)


def test_one_step_exact_case(golden_freq_short):
    eps = 1e-8
    P = FourierTaylorSeries.cosine(2, (1, 0), eps)
    N = NormalForm.linear(golden_freq_short)
    params = _params(eps, K=30)
    N1, P1, tr, rep = kam_step(N, P, params)
    out_r, out_s = params.eta * params.r, params.s - 5 * params.sigma
    assert P1.weighted_norm(out_r, out_s) <= 1e-14 * eps
    # generator F = (eps/omega1) sin theta1 up to sign convention
    expected_F = FourierTaylorSeries.from_terms(2, [
        ((1, 0), (0, 0), eps / 2j, (0, 0)),
        ((-1, 0), (0, 0), -eps / 2j, (0, 0))], real_symmetric=True)
    assert (tr.F - expected_F).weighted_norm(out_r, out_s) <= 1e-20
    assert all(complex(sj.value) == 0 for sj in tr.phi_shift)
    assert N1.omega.omega == N.omega.omega


def test_step_contraction_bound(golden_freq):
    # a single step on the benchmark contracts well below 8 eta^2 eps plus
    # the quadratic remainder
    eps = 1e-8
    P = (FourierTaylorSeries.cosine(2, (1, 0), eps)
         + FourierTaylorSeries.cosine(2, (1, 1), eps))
    N = NormalForm.linear(golden_freq)
    params = StepParams(eta=0.1, sigma=0.05, h=4.4e-6, K=106, r=3e-6, s=1.0,
                        epsilon=P.weighted_norm(3e-6, 1.0))
    N1, P1, tr, rep = kam_step(N, P, params)
    assert rep.contraction_ratio <= 9 * 0.1 ** 2
    assert rep.truncation_error <= 8 * 0.1 ** 2 * params.epsilon


def test_kam_step_q_passthrough(golden_freq):
    eps = 1e-10
    P = FourierTaylorSeries.cosine(2, (1, 0), eps)
    Q = (FourierTaylorSeries.action_monomial(2, (2, 0), 0.5)
         + FourierTaylorSeries.action_monomial(2, (0, 2), 0.5))
    N = NormalForm.linear(golden_freq)
    params = StepParams(eta=0.1, sigma=0.05, h=4.4e-8, K=106, r=3e-6, s=1.0,
                        epsilon=P.weighted_norm(3e-6, 1.0))
    N1, P1, Q1, tr, rep = kam_step_q(N, P, Q, 1.0, params)
    assert Q1 is Q
    assert rep.qf_norm <= rep.qf_bound


def _flow_time_one(F, pts, I0, n):
    grads_th = [F.dtheta(j) for j in range(n)]
    grads_I = [F.daction(j) for j in range(n)]

    def field(_t, y):
        m = y.size // (2 * n)
        Y = y.reshape(2 * n, m)
        th_, I_ = Y[:n].T, Y[n:].T
        dth = np.stack([g.evaluate_grid(I_, th_).real for g in grads_I])
        dI = -np.stack([g.evaluate_grid(I_, th_).real for g in grads_th])
        return np.concatenate([dth, dI]).ravel()

    y0 = np.concatenate([pts.T, I0.T]).ravel()
    sol = solve_ivp(field, (0.0, 1.0), y0, rtol=1e-12, atol=1e-16,
                    method="DOP853")
    Y = sol.y[:, -1].reshape(2 * n, -1)
    return Y[n:].T, Y[:n].T


def test_conjugation_identity_grid_oracle(golden_freq_short):
    # H(.; omega + shift) o X_F^1 = (N+ + P+)(.; omega) on a 16x16 grid,
    # checked against an independent ODE flow of the generator
    rng = np.random.default_rng(13)
    n, G = 2, 16
    th = np.arange(G) * 2 * math.pi / G
    T1, T2 = np.meshgrid(th, th, indexing="ij")
    pts = np.stack([T1.ravel(), T2.ravel()], axis=1)
    I0 = np.full_like(pts, 3e-5)
    N = NormalForm.linear(golden_freq_short)
    for trial in range(3):
        eps = 1e-9
        terms = []
        for _ in range(3):
            k = tuple(int(x) for x in rng.integers(-3, 4, n))
            m = tuple(int(x) for x in rng.integers(0, 2, n))
            if sum(m) > 1:
                m = (0, 0)
            c = complex(rng.normal(), rng.normal()) * eps / 2
            terms.append((k, m, c, (0, 0)))
            terms.append((tuple(-x for x in k), m, c.conjugate(), (0, 0)))
        terms.append(((0, 0), (1, 0), 0.3 * eps, (0, 0)))
        P = FourierTaylorSeries.from_terms(n, terms, d_max=4,
                                           real_symmetric=True)
        params = _params(P.weighted_norm(1e-4, 1.0), K=40)
        N1, P1, tr, rep = kam_step(N, P, params)
        shift = np.array([complex(x) for x in rep.shift]).real
        I_f, th_f = _flow_time_one(tr.F, pts, I0, n)
        lhs = (N.to_series(4) + P).evaluate_grid(I_f, th_f,
                                                 param_offset=shift).real
        rhs = (N1.to_series(4) + P1).evaluate_grid(I0, pts).real
        scale = np.max(np.abs(rhs))
        assert np.max(np.abs(lhs - rhs)) / scale <= 1e-8
