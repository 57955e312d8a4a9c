"""One KAM step: affine truncation with an adaptive cutoff, homological
equation, frequency correction, and the Lie-transform conjugation, plus the
variant that carries an integrable quadratic part through unchanged.

The perturbation after one step is

    P_plus = int_0^1 {(1-t) avg(R) + t R (+ Q), F} o X_F^t dt + (P - R) o X_F^1

evaluated by Gauss-Legendre quadrature in t, each node by a Lie series.
Every threshold inequality is measured and reported as a margin
(bound / actual, >= 1 means satisfied); implicit constants are explicit
configuration with default 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CertificationError, DomainError, NewtonError,
                     ParameterDomainError, ResonanceError, StepInfeasibleError)
from .series import CoefficientJet, FourierTaylorSeries, lie_transform, poisson_bracket


@dataclass(frozen=True)
class NormalForm:
    """N(I, omega) = e(omega) + omega . I at an anchor frequency.

    freq_jet rows are d(frequency_j)/d(parameter); it starts as the identity
    and accumulates the linear parts absorbed by frequency corrections.
    """

    e: CoefficientJet
    omega: "FrequencyVector"
    freq_jet: tuple = None

    def __post_init__(self):
        if self.freq_jet is None:
            n = self.omega.n
            eye = tuple(tuple(1.0 + 0j if i == j else 0j for j in range(n))
                        for i in range(n))
            object.__setattr__(self, "freq_jet", eye)

    @property
    def n(self):
        return self.omega.n

    @classmethod
    def linear(cls, omega):
        """N = omega . I with zero energy offset."""
        return cls(CoefficientJet(0.0, (0j,) * omega.n), omega)

    def to_series(self, d_max=4):
        n = self.n
        terms = [((0,) * n, (0,) * n, self.e.value, self.e.domega)]
        for j in range(n):
            m = tuple(1 if i == j else 0 for i in range(n))
            terms.append(((0,) * n, m, self.omega.omega[j], self.freq_jet[j]))
        return FourierTaylorSeries.from_terms(n, terms, d_max=d_max,
                                              real_symmetric=True)


@dataclass
class StepParams:
    """Geometry and thresholds of a single step."""

    eta: float
    sigma: float
    h: float
    K: int
    r: float
    s: float
    epsilon: float
    c_K: float = 1.0
    implicit_c: float = 1.0
    quad_order: int = 8
    lie_tol_rel: float = 1e-10
    compress_rel: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.eta < 0.125:
            raise DomainError(f"need 0 < eta < 1/8, got eta={self.eta}")
        if not 0.0 < self.sigma < self.s / 5.0:
            raise DomainError(
                f"need 0 < sigma < s/5 = {self.s/5}, got sigma={self.sigma}")
        if self.K < 1:
            raise DomainError(f"need K >= 1, got K={self.K}")


@dataclass
class KamTransform:
    """Generating Hamiltonian and parameter shift of one step.

    The phase-space map is never stored in closed form: it is the time-1 flow
    of F, applied to series by Lie transform or to points by ODE flow.
    """

    F: FourierTaylorSeries
    phi_shift: list  # CoefficientJet per component
    sigma: float
    eta: float
    r: float
    s: float
    lie_tail: float = 0.0


@dataclass
class StepReport:
    eps_in: float
    eps_out: float
    contraction_ratio: float
    truncation_error: float
    K_used: int
    K_formula: float
    k_formula_sufficed: bool
    F_norm: float
    condition_margins: dict = field(default_factory=dict)
    estim2: dict = field(default_factory=dict)
    qf_norm: float | None = None
    qf_bound: float | None = None
    lie_tail: float = 0.0
    tail_estimate: float = 0.0
    shift: list = field(default_factory=list)
    feasible: bool = True

    def to_dict(self):
        return {
            "eps_in": self.eps_in, "eps_out": self.eps_out,
            "contraction_ratio": self.contraction_ratio,
            "truncation_error": self.truncation_error,
            "K_used": self.K_used, "K_formula": self.K_formula,
            "k_formula_sufficed": self.k_formula_sufficed,
            "F_norm": self.F_norm,
            "condition_margins": dict(self.condition_margins),
            "estim2": dict(self.estim2),
            "qf_norm": self.qf_norm, "qf_bound": self.qf_bound,
            "lie_tail": self.lie_tail, "tail_estimate": self.tail_estimate,
            "shift": [[x.real for x in self.shift],
                      [x.imag for x in self.shift]],
            "feasible": self.feasible,
        }


def k_cutoff_formula(n, eta, sigma, c_K=1.0):
    """Initial-guess Fourier cutoff c_K sigma^-1 log(n eta^-2) (real-valued)."""
    return c_K * math.log(n / eta ** 2) / sigma


def russmann_truncate(P, params):
    """Affine-in-I, degree <= K approximation with adaptive cutoff doubling.

    The error is the exact majorant norm of the removed terms at
    (2 eta r, s - sigma); the cutoff doubles until it meets the 8 eta^2 eps
    budget.  Raises StepInfeasibleError when the Taylor tail alone (all
    Fourier modes kept) exceeds the budget.
    """
    eta, sigma = params.eta, params.sigma
    r2, s2 = 2.0 * eta * params.r, params.s - sigma
    budget = 8.0 * eta ** 2 * params.epsilon
    K0 = max(1, math.ceil(k_cutoff_formula(P.n, eta, sigma, params.c_K)))
    deg = P.fourier_degree()
    K = K0
    first = True
    while True:
        R, err = P.truncate(K, 1, r2, s2)
        if err <= budget:
            return R, err, K, first
        if K >= deg:
            _, taylor_err = P.truncate(deg, 1, r2, s2)
            raise StepInfeasibleError(
                f"Taylor tail alone violates the truncation budget: "
                f"|P - affine(P)| = {taylor_err:.3e} > 8 eta^2 eps = "
                f"{budget:.3e} at (2 eta r, s - sigma) = ({r2:.3e}, {s2:.3e})")
        K = min(2 * K, deg)
        first = False


def solve_homological(R, N, K_limit=None):
    """Solve {F, N} = R - [R]: divide each k != 0 coefficient by i k.omega.

    Jets account for the parameter dependence of the divisor through the
    accumulated frequency jet of N.
    """
    omega = N.omega
    K_limit = omega.K_verified if K_limit is None else min(K_limit, omega.K_verified)
    n = R.n
    freq = np.array([[complex(x) for x in row] for row in N.freq_jet])
    coeffs = {}
    for (k, m), (val, jet) in R.coeffs.items():
        if all(x == 0 for x in k):
            continue
        if sum(abs(x) for x in k) > K_limit:
            raise CertificationError(
                f"mode k={k} has |k|_1 = {sum(abs(x) for x in k)} beyond the "
                f"certified cutoff K_verified={omega.K_verified}")
        dot = sum(ki * wi for ki, wi in zip(k, omega.omega))
        if dot == 0.0:
            raise ResonanceError(f"exact resonance k.omega = 0 at k={k}")
        div = 1j * dot
        fval = val / div
        # d(k.freq)/dparam through the accumulated frequency jet
        wk = np.array([float(x) for x in k]) @ freq
        fjet = tuple((dj - fval * 1j * wj) / div for dj, wj in zip(jet, wk))
        coeffs[(k, m)] = (fval, fjet)
    return FourierTaylorSeries(n, coeffs, d_max=R.d_max,
                               real_symmetric=R.real_symmetric)


def frequency_correction(avgR, N, h):
    """Absorb [R] = e_hat + v_hat . I into the normal form.

    e_hat shifts the energy; the linear part v_hat is absorbed by moving the
    parameter anchor: Newton solves shift + v_hat(anchor + shift) = 0 on the
    first-order jet, so the anchored frequency value stays exactly omega.
    Returns (N_plus, shift jets, Dv_hat matrix).
    """
    n = N.n
    if avgR.action_degree() > 1:
        raise DomainError("[R] must be affine in I for the frequency correction")
    zero = (0,) * n
    e_hat = avgR.coeffs.get((zero, zero), (0j, (0j,) * n))
    v_val = np.zeros(n, dtype=complex)
    v_jet = np.zeros((n, n), dtype=complex)
    for j in range(n):
        m = tuple(1 if i == j else 0 for i in range(n))
        val, jet = avgR.coeffs.get((zero, m), (0j, (0j,) * n))
        v_val[j] = val
        v_jet[j] = jet
    vmax = float(np.max(np.abs(v_val))) if n else 0.0
    if vmax > h / 4.0:
        raise ParameterDomainError(
            f"|v_hat| = {vmax:.3e} exceeds h/4 = {h/4:.3e}: parameter "
            f"domain exhausted")
    # Newton on shift -> shift + v_val + Dv shift (affine model: 1-2 iterations)
    shift = np.zeros(n, dtype=complex)
    tol = 1e-14 * max(h, vmax, 1e-300)
    for _ in range(50):
        res = shift + v_val + v_jet @ shift
        if float(np.max(np.abs(res))) <= tol:
            break
        shift = shift - np.linalg.solve(np.eye(n) + v_jet, res)
    else:
        raise NewtonError("frequency-correction Newton did not converge in 50 "
                          f"iterations (residual {float(np.max(np.abs(res))):.3e})")
    dphi = np.linalg.inv(np.eye(n) + v_jet) - np.eye(n)
    e_jet = tuple(a + b for a, b in zip(N.e.domega, e_hat[1]))
    e_val = (N.e.value + e_hat[0]
             + sum(d * o for d, o in zip(e_jet, shift)))
    freq_jet = tuple(tuple(complex(N.freq_jet[i][j]) + v_jet[i, j]
                           for j in range(n)) for i in range(n))
    n_plus = NormalForm(CoefficientJet(e_val, e_jet), N.omega, freq_jet)
    shift_jets = [CoefficientJet(shift[j], tuple(dphi[j])) for j in range(n)]
    return n_plus, shift_jets, v_jet


def re_anchor(f, delta):
    """Move the parameter anchor by delta: values pick up jet . delta."""
    if all(d == 0 for d in delta):
        return f
    coeffs = {}
    for key, (val, jet) in f.coeffs.items():
        coeffs[key] = (val + sum(d * o for d, o in zip(jet, delta)), jet)
    return FourierTaylorSeries(f.n, coeffs, d_max=f.d_max,
                               real_symmetric=f.real_symmetric,
                               tail_estimate=f.tail_estimate)


def lie_displacement(start, F, r, s, tail_tol, max_terms=80):
    """sum_{l>=1} ad_F^l g / l!  given start = {g, F} (the l = 1 term)."""
    total = start
    term = start
    prev = start.weighted_norm(r, s)
    if prev == 0.0:
        return start, 0.0
    for l in range(1, max_terms):
        term = poisson_bracket(term, F, r, s).scale(1.0 / (l + 1))
        term = term.compress(tail_tol * 1e-3, r, s)
        norm = term.weighted_norm(r, s)
        if norm == 0.0:
            return total, 0.0
        total = total + term
        rho = norm / prev
        if norm <= tail_tol:
            tail = norm * rho / (1.0 - rho) if rho < 1.0 else norm
            return total, tail
        prev = norm
    return total, prev


def _gauss_legendre_01(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _threshold_margins(N, params, M=None):
    alpha, nu = N.omega.alpha, N.omega.nu
    eta, sigma, r, h, eps = (params.eta, params.sigma, params.r, params.h,
                             params.epsilon)
    c = params.implicit_c
    inf = math.inf
    margins = {
        "eps_le_alpha_eta2_r_sigma_nu":
            (c * alpha * eta ** 2 * r * sigma ** nu / eps) if eps > 0 else inf,
        "eps_le_h_r": (c * h * r / eps) if eps > 0 else inf,
    }
    k_formula = k_cutoff_formula(N.n, eta, sigma, params.c_K)
    margins["h_le_alpha_2K_nu"] = alpha / (2.0 * k_formula ** nu) / h
    if M is not None:
        margins["r_le_M_alpha_eta2_sigma_nu"] = \
            c * alpha * eta ** 2 * sigma ** nu / (M * r)
    return margins, k_formula


def _estim2(F, transform_shift, v_jet, params, alpha, nu):
    """Measured transformation sizes against the per-step a-priori bounds."""
    eta, sigma, r, eps = params.eta, params.sigma, params.r, params.epsilon
    out_r, out_s = eta * r, params.s - 5.0 * sigma
    n = F.n
    lie_tol = max(params.lie_tol_rel * max(eps, 1e-300), 1e-300)
    dI, dTh = [], []
    for j in range(n):
        start_i = -F.dtheta(j)
        start_t = F.daction(j)
        di, _ = lie_displacement(start_i, F, out_r, out_s, lie_tol)
        dt, _ = lie_displacement(start_t, F, out_r, out_s, lie_tol)
        dI.append(di)
        dTh.append(dt)
    w_phi = 0.0
    for j in range(n):
        w_phi = max(w_phi, dI[j].weighted_norm(out_r, out_s) / r,
                    dTh[j].weighted_norm(out_r, out_s) / sigma)
    # W (DPhi - Id) W^-1 in the sup-induced (max row sum) norm
    w_dphi = 0.0
    for i in range(n):
        row_i = sum(dI[i].daction(j).weighted_norm(out_r, out_s) for j in range(n))
        row_i += sum(dI[i].dtheta(j).weighted_norm(out_r, out_s) * sigma / r
                     for j in range(n))
        row_t = sum(dTh[i].daction(j).weighted_norm(out_r, out_s) * r / sigma
                    for j in range(n))
        row_t += sum(dTh[i].dtheta(j).weighted_norm(out_r, out_s) for j in range(n))
        w_dphi = max(w_dphi, row_i, row_t)
    bound = params.implicit_c * eps / (alpha * r * sigma ** nu)
    phi_dist = max((abs(sj.value) for sj in transform_shift), default=0.0)
    dphi_mat = np.linalg.inv(np.eye(n) + v_jet) - np.eye(n)
    dphi_dist = float(np.max(np.sum(np.abs(dphi_mat), axis=1))) if n else 0.0
    bound_phi = params.implicit_c * eps / r
    return {
        "W_phi_minus_id": w_phi,
        "W_dphi_minus_id_Winv": w_dphi,
        "bound_W": bound,
        "phi_minus_id": phi_dist,
        "Dphi_minus_id": dphi_dist,
        "bound_phi": bound_phi,
        "margin_W": (bound / w_phi) if w_phi > 0 else math.inf,
        "margin_DW": (bound / w_dphi) if w_dphi > 0 else math.inf,
        "margin_phi": (bound_phi / phi_dist) if phi_dist > 0 else math.inf,
    }


def kam_step(N, P, params, strict=False):
    """One iteration step: H = N + P -> H o F = N_plus + P_plus."""
    n_plus, p_plus, _, transform, report = _step(N, P, None, None, params, strict)
    return n_plus, p_plus, transform, report


def kam_step_q(N, P, Q, M, params, strict=False):
    """Step variant with a carried quadratic part: the integrable,
    at-least-quadratic Q passes
    through bit-identical while its bracket with F feeds P_plus."""
    zero = (0,) * Q.n
    for (k, m) in Q.coeffs:
        if k != zero:
            raise DomainError(f"Q must be integrable (k = 0 only), found k={k}")
        if sum(m) < 2:
            raise DomainError(f"Q must be at least quadratic in I, found m={m}")
    q_norm = Q.weighted_norm(params.r, params.s)
    if q_norm > M * params.r ** 2 * (1.0 + 1e-12):
        raise DomainError(
            f"|Q|_r = {q_norm:.3e} exceeds M r^2 = {M * params.r**2:.3e}")
    return _step(N, P, Q, M, params, strict)


def _step(N, P, Q, M, params, strict):
    alpha, nu = N.omega.alpha, N.omega.nu
    eta, sigma, r, s = params.eta, params.sigma, params.r, params.s
    out_r, out_s = eta * r, s - 5.0 * sigma
    eps = params.epsilon
    margins, k_formula = _threshold_margins(N, params, M)

    if P.is_zero():
        transform = KamTransform(FourierTaylorSeries.zero(P.n, P.d_max),
                                 [CoefficientJet(0.0, (0.0,) * P.n)] * P.n,
                                 sigma, eta, r, s)
        report = StepReport(0.0, 0.0, 0.0, 0.0, params.K, k_formula, True, 0.0,
                            condition_margins=margins, feasible=True)
        return N, P, Q, transform, report

    feasible = all(m >= 1.0 for m in margins.values())
    if strict and not feasible:
        worst = min(margins, key=margins.get)
        raise StepInfeasibleError(
            f"threshold inequality '{worst}' violated: margin = "
            f"{margins[worst]:.3e} < 1", margins=margins)

    R, trunc_err, K_used, formula_ok = russmann_truncate(P, params)
    if not formula_ok:
        # the adaptively enlarged cutoff tightens the h <= alpha(2K^nu)^-1 check
        margins["h_le_alpha_2K_nu"] = alpha / (2.0 * K_used ** nu) / params.h
        feasible = all(m >= 1.0 for m in margins.values())
    avg = R.angle_average()
    osc = R - avg
    F = solve_homological(osc, N)
    lie_tol = max(params.lie_tol_rel * eps, 1e-300)

    b_avg = poisson_bracket(avg, F, out_r, out_s)
    b_r = poisson_bracket(R, F, out_r, out_s)
    qf_norm = qf_bound = None
    b_q = None
    if Q is not None:
        b_q = poisson_bracket(Q, F, out_r, out_s)
        qf_norm = b_q.weighted_norm(out_r, out_s)
        qf_bound = params.implicit_c * M * r * eps / (alpha * sigma ** nu)

    p_plus = FourierTaylorSeries.zero(P.n, P.d_max)
    lie_tail = 0.0
    nodes, weights = _gauss_legendre_01(params.quad_order)
    for t, w in zip(nodes, weights):
        integrand = b_avg.scale(1.0 - t) + b_r.scale(t)
        if b_q is not None:
            integrand = integrand + b_q
        flowed, tail = lie_transform(integrand, F, out_r, out_s, t=t,
                                     tail_tol=lie_tol)
        p_plus = p_plus + flowed.scale(w)
        lie_tail += w * tail
    remainder = P - R
    if not remainder.is_zero():
        flowed, tail = lie_transform(remainder, F, out_r, out_s, t=1.0,
                                     tail_tol=lie_tol)
        p_plus = p_plus + flowed
        lie_tail += tail

    n_plus, shift_jets, v_jet = frequency_correction(avg, N, params.h)
    delta = tuple(sj.value for sj in shift_jets)
    p_plus = re_anchor(p_plus, delta)
    p_plus = p_plus.compress(params.compress_rel * eps, out_r, out_s)

    eps_out = p_plus.weighted_norm(out_r, out_s)
    estim2 = _estim2(F, shift_jets, v_jet, params, alpha, nu)
    transform = KamTransform(F, shift_jets, sigma, eta, r, s, lie_tail)
    report = StepReport(
        eps_in=eps, eps_out=eps_out,
        contraction_ratio=eps_out / eps if eps > 0 else 0.0,
        truncation_error=trunc_err, K_used=K_used, K_formula=k_formula,
        k_formula_sufficed=formula_ok,
        F_norm=F.weighted_norm(r, s - sigma),
        condition_margins=margins, estim2=estim2,
        qf_norm=qf_norm, qf_bound=qf_bound,
        lie_tail=lie_tail, tail_estimate=p_plus.tail_estimate,
        shift=list(delta), feasible=feasible)
    return n_plus, p_plus, Q, transform, report
