"""Iteration schedule, the linear-convergence KAM loop, embedding
composition, and the a-priori estimate checks.

The infinite iteration is truncated at a stop tolerance; everything the
truncation neglects (Lie tails, compression, stopped perturbation norm) is
surfaced as diagnostics rather than silently dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import GridTooSmallError, KamError, ScheduleInfeasibleError
from .series import FourierTaylorSeries, lie_transform
from .step import StepParams, k_cutoff_formula, kam_step, kam_step_q


def conservative_eta(nu):
    """The fixed linear-scheme constant 10^-1 4^-nu."""
    return 0.1 * 4.0 ** (-nu)


@dataclass
class IterationSchedule:
    eta: float
    kappa: float
    nu: float
    mode: str
    sigma: list
    s: list
    K_real: list
    K_int: list
    h: list
    eps: list
    r: list
    margins: list            # per-step dict of threshold margins
    feasible: bool
    binding: str | None
    empirical_gamma: float
    gamma: float
    delta: float | None
    geometric_decrease: bool
    max_iter: int
    c_K: float = 1.0
    implicit_c: float = 1.0

    def to_dict(self):
        return {
            "eta": self.eta, "kappa": self.kappa, "nu": self.nu,
            "mode": self.mode, "sigma": list(self.sigma), "s": list(self.s),
            "K_real": list(self.K_real), "K_int": list(self.K_int),
            "h": list(self.h), "eps": list(self.eps), "r": list(self.r),
            "margins": [dict(m) for m in self.margins],
            "feasible": self.feasible, "binding": self.binding,
            "empirical_gamma": self.empirical_gamma, "gamma": self.gamma,
            "delta": self.delta, "geometric_decrease": self.geometric_decrease,
            "max_iter": self.max_iter, "c_K": self.c_K,
            "implicit_c": self.implicit_c,
        }


def build_schedule(dom, omega, eps0, r, mode="theorem2", eta=None,
                   max_iter=40, c_K=1.0, implicit_c=1.0, M=1.0, delta=0.1,
                   strict=False):
    """Build the sequences sigma_i, s_i, K_i, h_i, eps_i, r_i and pre-check
    every threshold inequality for each step up to max_iter.

    With the conservative default eta the i = 0 check implies all the others; for
    an overridden eta that implication can fail, which is exactly why every
    i is checked here and re-checked per executed step.
    """
    alpha, nu, n = omega.alpha, omega.nu, omega.n
    if eta is None:
        eta = conservative_eta(nu)
    kappa = 9.0 * eta ** 2
    s = dom.s
    sigma0 = s / 20.0
    k0 = k_cutoff_formula(n, eta, sigma0, c_K)
    h0 = alpha / (2.0 * k0 ** nu)

    sigma_i, s_i, k_real, k_int, h_i, eps_i, r_i = [], [], [], [], [], [], []
    cur_s = s
    for i in range(max_iter):
        sig = sigma0 * 2.0 ** (-i)
        sigma_i.append(sig)
        s_i.append(cur_s)
        k_real.append(k0 * 2.0 ** i)
        k_int.append(max(1, math.ceil(k0 * 2.0 ** i)))
        h_i.append(h0 * 2.0 ** (-i * nu))
        eps_i.append(eps0 * kappa ** i)
        r_i.append(r * eta ** i)
        cur_s = cur_s - 5.0 * sig

    h_dom = dom.h if dom.h > 0.0 else alpha * s ** nu
    margins = []
    worst_eps_margin = math.inf
    binding = None
    for i in range(max_iter):
        if eps_i[i] > 0.0:
            m = {
                "eps_le_alpha_eta2_r_sigma_nu":
                    implicit_c * alpha * eta ** 2 * r_i[i] * sigma_i[i] ** nu / eps_i[i],
                "eps_le_h_r": implicit_c * h_i[i] * r_i[i] / eps_i[i],
                "h_le_alpha_2K_nu": 1.0,  # h_i is defined by this equality
            }
        else:
            m = {"eps_le_alpha_eta2_r_sigma_nu": math.inf,
                 "eps_le_h_r": math.inf,
                 "h_le_alpha_2K_nu": 1.0}
        if mode == "theorem2":
            m["r_le_M_alpha_eta2_sigma_nu"] = \
                implicit_c * alpha * eta ** 2 * sigma_i[i] ** nu / (M * r_i[i])
        margins.append(m)
        for name in ("eps_le_alpha_eta2_r_sigma_nu", "eps_le_h_r"):
            if m[name] < worst_eps_margin:
                worst_eps_margin = m[name]
                binding = f"{name}[i={i}]"
    global_margins = {"alpha_s_nu_le_h": h_dom / (alpha * s ** nu),
                      "gamma_threshold": worst_eps_margin}
    if mode == "theorem2":
        global_margins["r_le_delta_M_alpha_s_nu"] = \
            delta * alpha * s ** nu / (M * r)

    empirical_gamma = (eps0 * worst_eps_margin / (alpha * r * s ** nu)
                       if eps0 > 0.0 else 0.0)
    gamma = eps0 / (alpha * r * s ** nu)
    feasible = (worst_eps_margin >= 1.0
                and all(v >= 1.0 for m in margins for v in m.values())
                and all(v >= 1.0 for v in global_margins.values()))
    if not feasible:
        all_named = {f"{k}[i={i}]": v for i, m in enumerate(margins)
                     for k, v in m.items()}
        all_named.update(global_margins)
        binding = min(all_named, key=all_named.get)
    if strict and not feasible:
        raise ScheduleInfeasibleError(
            f"schedule infeasible: '{binding}' has margin "
            f"{min(v for m in margins for v in m.values()):.3e}; largest "
            f"admissible eps0 gives gamma = {empirical_gamma:.3e}",
            binding=binding, empirical_gamma=empirical_gamma)

    ratio1 = [eps_i[i] / (h_i[i] * r_i[i]) for i in range(max_iter)]
    ratio2 = [eps_i[i] / (h_i[i] ** 2 * r_i[i]) for i in range(max_iter)]
    geo = (all(b < a for a, b in zip(ratio1, ratio1[1:]))
           and all(b < a for a, b in zip(ratio2, ratio2[1:])))

    margins0 = dict(margins[0])
    margins0.update(global_margins)
    margins[0] = margins0
    return IterationSchedule(
        eta=eta, kappa=kappa, nu=nu, mode=mode, sigma=sigma_i, s=s_i,
        K_real=k_real, K_int=k_int, h=h_i, eps=eps_i, r=r_i,
        margins=margins, feasible=feasible, binding=binding,
        empirical_gamma=empirical_gamma, gamma=gamma,
        delta=delta if mode == "theorem2" else None,
        geometric_decrease=geo, max_iter=max_iter, c_K=c_K,
        implicit_c=implicit_c)


@dataclass
class TorusResult:
    u: FourierTaylorSeries            # angle displacement, theta only
    v: FourierTaylorSeries            # action embedding, theta only (vector
    #                                   components stored separately below)
    u_components: list = field(default_factory=list)
    v_components: list = field(default_factory=list)
    phi_omega: tuple = ()
    phi_jet: tuple = ()
    strip: float = 0.0
    weighted_dist: float = 0.0
    phi_dist: float = 0.0
    invariance_residual: float = math.nan
    aliasing: float = 0.0
    iterations: int = 0

    def to_dict(self):
        return {
            "u": [c.to_records() for c in self.u_components],
            "v": [c.to_records() for c in self.v_components],
            "phi_omega": [complex(x).real for x in self.phi_omega],
            "phi_jet": [[complex(x).real for x in row] for row in self.phi_jet],
            "strip": self.strip, "weighted_dist": self.weighted_dist,
            "phi_dist": self.phi_dist,
            "invariance_residual": self.invariance_residual,
            "aliasing": self.aliasing, "iterations": self.iterations,
        }


@dataclass
class ConvergenceReport:
    steps: list
    ratios: list
    eps_measured: list
    eps_schedule: list
    stop_reason: str
    accumulated_tail: float
    est1: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "steps": [s.to_dict() for s in self.steps],
            "ratios": list(self.ratios),
            "eps_measured": list(self.eps_measured),
            "eps_schedule": list(self.eps_schedule),
            "stop_reason": self.stop_reason,
            "accumulated_tail": self.accumulated_tail,
            "est1": dict(self.est1),
        }


def _flow_field(F, n):
    """Hamilton field of F: theta' = dF/dI, I' = -dF/dtheta, vectorized."""
    dI = [F.daction(j) for j in range(n)]
    dTh = [F.dtheta(j) for j in range(n)]

    def field_fn(_t, y):
        pts = y.reshape(-1, 2 * n)
        I, th = pts[:, :n], pts[:, n:]
        out = np.empty_like(pts)
        for j in range(n):
            out[:, j] = -dTh[j].evaluate_grid(I, th).real
            out[:, n + j] = dI[j].evaluate_grid(I, th).real
        return out.reshape(-1)

    return field_fn


def flow_points(F, I, theta, t=1.0, rtol=1e-12):
    """Flow (I, theta) points through X_F^t by adaptive high-order
    integration.  Inputs and outputs are (N, n) real arrays."""
    n = F.n
    I = np.asarray(I, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if F.is_zero() or t == 0.0:
        return I.copy(), theta.copy()
    scale = max(max(F.dtheta(j).weighted_norm(max(np.max(np.abs(I)), 1e-9), 0.0)
                    for j in range(n)), 1e-290)
    y0 = np.concatenate([I, theta], axis=1).reshape(-1)
    sol = solve_ivp(_flow_field(F, n), (0.0, t), y0, method="DOP853",
                    rtol=rtol, atol=1e-3 * rtol * scale, dense_output=False)
    if not sol.success:
        raise KamError(f"flow integration failed: {sol.message}")
    out = sol.y[:, -1].reshape(-1, 2 * n)
    return out[:, :n], out[:, n:]


def _theta_grid(n, grid_size):
    axes = [np.arange(grid_size) * (2.0 * math.pi / grid_size)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _series_from_fft(values, n, grid_size, floor):
    """Fourier coefficients of real samples on the uniform grid."""
    grid = values.reshape((grid_size,) * n)
    coef = np.fft.fftn(grid) / grid_size ** n
    freqs = np.fft.fftfreq(grid_size, d=1.0 / grid_size).astype(int)
    terms = []
    top = 0.0
    it = np.ndindex(*coef.shape)
    for idx in it:
        c = coef[idx]
        if abs(c) <= floor:
            continue
        k = tuple(int(freqs[i]) for i in idx)
        if any(abs(x) > grid_size // 4 for x in k):
            top += abs(c)
            continue
        terms.append((k, (0,) * n, c))
    ser = FourierTaylorSeries.from_terms(n, terms, d_max=0, real_symmetric=True)
    return ser, top


def compose_embedding(transforms, n, grid_size=32, rtol=1e-12):
    """Evaluate the composed step flows on a theta grid starting from the
    trivial embedding (0, theta), then reconstruct Fourier series of the
    action embedding v and angle displacement u by DFT.

    Returns (u_components, v_components, aliasing diagnostic).
    """
    max_deg = max((tr.F.fourier_degree() for tr in transforms), default=0)
    if grid_size < 4 * max(max_deg, 1):
        raise GridTooSmallError(
            f"grid_size={grid_size} < 4 * max Fourier degree {max_deg}")
    theta0 = _theta_grid(n, grid_size)
    I = np.zeros_like(theta0)
    theta = theta0.copy()
    for tr in reversed(transforms):
        I, theta = flow_points(tr.F, I, theta, t=1.0, rtol=rtol)
    du = theta - theta0
    u_comp, v_comp = [], []
    aliasing = 0.0
    vmax = max(float(np.max(np.abs(I))), 1e-300)
    floor_v = 1e-16 * vmax
    # the angle columns carry quantization noise at the ulp of 2 pi; angle
    # displacements below that are not measurable on the grid
    floor_u = max(1e-16 * float(np.max(np.abs(du))),
                  4.0 * np.finfo(float).eps * 2.0 * math.pi)
    for j in range(n):
        vj, top_v = _series_from_fft(I[:, j], n, grid_size, floor_v)
        uj, _ = _series_from_fft(du[:, j], n, grid_size, floor_u)
        v_comp.append(vj)
        u_comp.append(uj)
        aliasing = max(aliasing, top_v)
    vnorm = max(sum(v.weighted_norm(1.0, 0.0) for v in v_comp), 1e-300)
    if transforms and aliasing >= 1e-3 * vnorm:
        raise GridTooSmallError(
            f"aliasing diagnostic {aliasing:.3e} >= 1e-3 |v| = {1e-3*vnorm:.3e}; "
            f"increase grid_size beyond {grid_size}")
    return u_comp, v_comp, aliasing


def embedding_by_lie_series(transforms, n, r, s, tail_tol=1e-14):
    """Cross-check oracle: push the coordinate functions through the Lie
    transforms instead of flowing grid points.  Only practical for short
    runs; returns (u_components, v_components) as series."""
    I_series = [FourierTaylorSeries.action_monomial(n, tuple(1 if i == j else 0
                                                             for i in range(n)))
                for j in range(n)]
    from .step import lie_displacement
    u_comp, v_comp = [], []
    for j in range(n):
        vj = I_series[j]
        uj = FourierTaylorSeries.zero(n)
        # g o (F_0 o F_1 o ...) = ((g o F_0) o F_1) o ... : push the
        # coordinate functions through the transforms in forward order
        for tr in transforms:
            vj, _ = lie_transform(vj, tr.F, r, s, tail_tol=tail_tol)
            if not uj.is_zero():
                uj, _ = lie_transform(uj, tr.F, r, s, tail_tol=tail_tol)
            disp, _ = lie_displacement(tr.F.daction(j), tr.F, r, s, tail_tol)
            uj = uj + disp
        v_comp.append(_restrict_to_torus(vj))
        u_comp.append(_restrict_to_torus(uj))
    return u_comp, v_comp


def _restrict_to_torus(f):
    zero_m = (0,) * f.n
    coeffs = {key: cj for key, cj in f.coeffs.items() if key[1] == zero_m}
    return FourierTaylorSeries(f.n, coeffs, d_max=f.d_max,
                               real_symmetric=f.real_symmetric)


def run_iteration(N0, P0, schedule, Q0=None, M=1.0, stop_tol=1e-30,
                  strict=False, grid_size=32, quad_order=8, flow_rtol=1e-12):
    """Drive the KAM iteration with the given schedule.

    Stops when the measured perturbation norm falls below stop_tol (relative
    to the initial norm) or the schedule runs out.  The schedule's epsilon
    bound is asserted per step, never assumed.
    """
    n = N0.n
    N, P, Q = N0, P0, Q0
    transforms = []
    reports = []
    eps_meas, ratios = [], []
    eps0 = P0.weighted_norm(schedule.r[0], schedule.s[0])
    phi = np.array(N0.omega.omega, dtype=complex)
    phi_jet = np.eye(n, dtype=complex)
    stop_reason = "max_iter"
    steps_run = 0
    for i in range(schedule.max_iter):
        eps = P.weighted_norm(schedule.r[i], schedule.s[i])
        eps_meas.append(eps)
        if eps <= stop_tol * eps0 or P.is_zero():
            stop_reason = "stop_tol"
            break
        params = StepParams(
            eta=schedule.eta, sigma=schedule.sigma[i], h=schedule.h[i],
            K=schedule.K_int[i], r=schedule.r[i], s=schedule.s[i],
            epsilon=eps, c_K=schedule.c_K, implicit_c=schedule.implicit_c,
            quad_order=quad_order)
        if Q is not None:
            N, P, Q, tr, rep = kam_step_q(N, P, Q, M, params, strict=strict)
        else:
            N, P, tr, rep = kam_step(N, P, params, strict=strict)
        transforms.append(tr)
        reports.append(rep)
        ratios.append(rep.contraction_ratio)
        if rep.feasible and rep.eps_out > schedule.eps[min(i + 1, schedule.max_iter - 1)] * (1.0 + 1e-9):
            msg = (f"step {i}: measured eps_out {rep.eps_out:.3e} exceeds the "
                   f"schedule bound {schedule.eps[min(i+1, schedule.max_iter-1)]:.3e} "
                   f"despite margins >= 1")
            if strict:
                raise KamError(msg)
            rep.condition_margins["schedule_bound_violated"] = 0.0
        delta = np.array([sj.value for sj in tr.phi_shift], dtype=complex)
        step_jet = np.eye(n, dtype=complex) + np.array(
            [[complex(x) for x in sj.domega] for sj in tr.phi_shift])
        phi = phi + phi_jet @ delta
        phi_jet = phi_jet @ step_jet
        steps_run += 1
    else:
        eps_meas.append(P.weighted_norm(schedule.r[schedule.max_iter - 1],
                                        schedule.s[schedule.max_iter - 1]))

    u_comp, v_comp, aliasing = compose_embedding(
        transforms, n, grid_size=grid_size, rtol=flow_rtol)
    strip = schedule.s[0] / 2.0
    r0, s0 = schedule.r[0], schedule.s[0]
    w_dist = 0.0
    for j in range(n):
        w_dist = max(w_dist, v_comp[j].weighted_norm(1.0, strip) / r0,
                     u_comp[j].weighted_norm(1.0, strip) / s0)
    phi_dist = float(np.max(np.abs(phi - np.array(N0.omega.omega)))) if n else 0.0

    result = TorusResult(
        u=u_comp[0] if u_comp else FourierTaylorSeries.zero(n),
        v=v_comp[0] if v_comp else FourierTaylorSeries.zero(n),
        u_components=u_comp, v_components=v_comp,
        phi_omega=tuple(phi), phi_jet=tuple(map(tuple, phi_jet)),
        strip=strip, weighted_dist=w_dist, phi_dist=phi_dist,
        aliasing=aliasing, iterations=steps_run)
    residual = verify_invariance(result, N0, P0, Q0, grid_size=grid_size)
    result.invariance_residual = residual
    tails = sum(rep.tail_estimate + rep.lie_tail for rep in reports)
    report = ConvergenceReport(
        steps=reports, ratios=ratios, eps_measured=eps_meas,
        eps_schedule=list(schedule.eps[:len(eps_meas)]),
        stop_reason=stop_reason, accumulated_tail=tails)
    report.est1 = check_est1(result, eps0, r0, s0, N0.omega.alpha,
                             schedule.nu, schedule.implicit_c)
    return result, report


def verify_invariance(result, N0, P0, Q0=None, grid_size=32):
    """A-posteriori residual sup_theta |X_H(Phi(theta)) - DPhi(theta) omega|
    with H the original Hamiltonian evaluated at the corrected parameter."""
    n = N0.n
    H = N0.to_series(d_max=max(P0.d_max, 4)) + P0
    if Q0 is not None:
        H = H + Q0
    omega = np.array(N0.omega.omega)
    offset = tuple(np.array(result.phi_omega, dtype=complex) - omega)
    theta = _theta_grid(n, grid_size)
    npts = theta.shape[0]
    I = np.zeros((npts, n))
    th = np.zeros((npts, n))
    for j in range(n):
        I[:, j] = result.v_components[j].evaluate_grid(
            np.zeros((npts, n)), theta).real
        th[:, j] = theta[:, j] + result.u_components[j].evaluate_grid(
            np.zeros((npts, n)), theta).real
    residual = 0.0
    for j in range(n):
        # theta_j' : dH/dI_j(Phi) must equal omega_j + (Du(theta) omega)_j
        dh = H.daction(j).evaluate_grid(I, th, param_offset=offset).real
        du_om = np.zeros(npts)
        for l in range(n):
            du_om += result.u_components[j].dtheta(l).evaluate_grid(
                np.zeros((npts, n)), theta).real * omega[l]
        residual = max(residual, float(np.max(np.abs(dh - omega[j] - du_om))))
        # I_j' : -dH/dtheta_j(Phi) must equal (Dv(theta) omega)_j
        dth = H.dtheta(j).evaluate_grid(I, th, param_offset=offset).real
        dv_om = np.zeros(npts)
        for l in range(n):
            dv_om += result.v_components[j].dtheta(l).evaluate_grid(
                np.zeros((npts, n)), theta).real * omega[l]
        residual = max(residual, float(np.max(np.abs(-dth - dv_om))))
    return residual


def check_est1(result, eps0, r, s, alpha, nu, c=1.0):
    """Measured embedding and parameter-map sizes against the a-priori bounds
    c (alpha r s^nu)^-1 |P| and c r^-1 |P|."""
    bound_w = c * eps0 / (alpha * r * s ** nu)
    bound_phi = c * eps0 / r
    w = result.weighted_dist
    phi = result.phi_dist
    n = len(result.phi_omega)
    dphi = np.array([[complex(x) for x in row] for row in result.phi_jet])
    dphi_dist = float(np.max(np.sum(np.abs(dphi - np.eye(n)), axis=1)))
    lip_phi = alpha * s ** nu * dphi_dist
    return {
        "W_phi_minus_phi0": w, "bound_W": bound_w,
        "ratio_W": w / bound_w if bound_w > 0 else 0.0,
        "phi_minus_id": phi, "bound_phi": bound_phi,
        "ratio_phi": phi / bound_phi if bound_phi > 0 else 0.0,
        "Dphi_minus_id": dphi_dist,
        "lip_phi_weighted": lip_phi,
        "ratio_lip_phi": lip_phi / bound_phi if bound_phi > 0 else 0.0,
    }
