"""From a perturbed integrable Hamiltonian h(p) + f(q, p) to the
parameterized normal form, the two radius regimes, and the torus-distance
scaling measurement.

The frequency becomes an independent parameter through the action anchor
p0(omega) solving grad h(p0) = omega; the integrable remainder
h(p0 + I) - h(p0) - omega . I is purely quadratic-and-higher and either
rides along as Q (theorem2 mode) or is absorbed into P (theorem1 mode).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .diophantine import FrequencyVector
from .errors import DomainError, KamError, NewtonError
from .scheduler import build_schedule, run_iteration
from .series import CoefficientJet, DomainParams, FourierTaylorSeries
from .step import NormalForm


class IntegrableSystem:
    """An integrable Hamiltonian h(p) given symbolically, with gradient,
    Hessian, and Taylor data at arbitrary action points."""

    def __init__(self, expr, n, hessian_bound):
        self.n = int(n)
        self.M = float(hessian_bound)
        self.symbols = sp.symbols(f"p1:{n + 1}")
        self.expr = sp.sympify(expr, locals={str(s): s for s in self.symbols})
        self._h = sp.lambdify(self.symbols, self.expr, "numpy")
        self._grad = [sp.lambdify(self.symbols, sp.diff(self.expr, s), "numpy")
                      for s in self.symbols]
        hess = [[sp.diff(self.expr, a, b) for b in self.symbols]
                for a in self.symbols]
        self._hess = sp.lambdify(self.symbols, sp.Matrix(hess), "numpy")
        self._deriv_cache = {}

    @classmethod
    def quadratic(cls, n):
        expr = sum(sp.Symbol(f"p{j+1}") ** 2 for j in range(n)) / 2
        return cls(expr, n, 1.0)

    def value(self, p):
        return float(self._h(*p))

    def gradient(self, p):
        return np.array([float(g(*p)) for g in self._grad])

    def hessian(self, p):
        return np.asarray(self._hess(*p), dtype=float)

    def derivative(self, m, p):
        """d^m h / dp^m at p, for a multi-index m."""
        m = tuple(int(x) for x in m)
        fn = self._deriv_cache.get(m)
        if fn is None:
            expr = self.expr
            for j, mj in enumerate(m):
                if mj:
                    expr = sp.diff(expr, self.symbols[j], mj)
            fn = sp.lambdify(self.symbols, expr, "numpy")
            self._deriv_cache[m] = fn
        return float(fn(*p))

    def solve_anchor(self, omega, p_init=None, tol=1e-14, max_iter=60):
        """Newton solve of grad h(p0) = omega."""
        omega = np.asarray(omega, dtype=float)
        p = np.array(p_init, dtype=float) if p_init is not None else omega.copy()
        for _ in range(max_iter):
            res = self.gradient(p) - omega
            if float(np.max(np.abs(res))) <= tol * (1.0 + float(np.max(np.abs(omega)))):
                H = self.hessian(p)
                if abs(np.linalg.det(H)) < 1e-300:
                    raise DomainError("degenerate Hessian at the anchor action")
                return p, np.linalg.inv(H)
            H = self.hessian(p)
            try:
                p = p - np.linalg.solve(H, res)
            except np.linalg.LinAlgError as exc:
                raise DomainError(f"singular Hessian during Newton: {exc}")
        raise NewtonError(
            f"anchor Newton did not converge for omega={tuple(omega)}")


def _multi_indices(n, lo, hi):
    for total in range(lo, hi + 1):
        for cuts in itertools.combinations_with_replacement(range(n), total):
            m = [0] * n
            for c in cuts:
                m[c] += 1
            yield tuple(m)


@dataclass
class PerturbationSetup:
    N: NormalForm
    P: FourierTaylorSeries
    Q: FourierTaylorSeries | None
    p0: np.ndarray
    dp0: np.ndarray          # dp0/domega = Hess^-1
    r: float
    s: float
    eps_f: float
    mode: str
    M: float


def parameterize(sys, f, omega, r, s, mode="theorem2", d_max=4, p_init=None):
    """Build the normal-form data at the anchor action p0(omega).

    f is a FourierTaylorSeries in theta only (its action dependence, if any,
    must already be centered at p0).  Jets in omega come from the implicit
    function theorem: dp0/domega = Hess(h)(p0)^-1.
    """
    if isinstance(omega, FrequencyVector):
        om_vec = np.array(omega.omega)
        freq = omega
    else:
        raise DomainError("parameterize needs a certified FrequencyVector")
    n = sys.n
    p0, dp0 = sys.solve_anchor(om_vec, p_init)
    e_val = sys.value(p0)
    e_jet = tuple(complex(x) for x in (om_vec @ dp0))
    N = NormalForm(CoefficientJet(e_val, e_jet), freq)

    # P_f: the perturbation, with omega jets from the moving anchor
    pf_terms = []
    for (k, m), (val, jet) in f.coeffs.items():
        if sum(m) > 0:
            raise DomainError(
                "f must be a function of the angles only (expand any action "
                "dependence around p0 before calling parameterize)")
        pf_terms.append((k, m, val, jet))
    P_f = FourierTaylorSeries.from_terms(n, pf_terms, d_max=d_max,
                                         real_symmetric=f.real_symmetric)

    # P_h = h(p0 + I) - h(p0) - omega . I : Taylor data of degrees 2..d_max
    ph_terms = []
    for m in _multi_indices(n, 2, d_max):
        mfact = 1.0
        for mj in m:
            mfact *= math.factorial(mj)
        val = sys.derivative(m, p0) / mfact
        jet = []
        for l in range(n):
            grad_m = np.array([sys.derivative(tuple(
                mj + (1 if j == i else 0) for j, mj in enumerate(m)), p0)
                for i in range(n)]) / mfact
            jet.append(complex(grad_m @ dp0[:, l]))
        if val != 0.0 or any(j != 0 for j in jet):
            ph_terms.append(((0,) * n, m, val, tuple(jet)))
    P_h = FourierTaylorSeries.from_terms(n, ph_terms, d_max=d_max,
                                         real_symmetric=True)

    eps_f = P_f.weighted_norm(r, s)
    if mode == "theorem2":
        return PerturbationSetup(N, P_f, P_h, p0, dp0, r, s, eps_f, mode, sys.M)
    return PerturbationSetup(N, P_f + P_h, None, p0, dp0, r, s, eps_f, mode,
                             sys.M)


def choose_radius(mode, eps, alpha, s, nu, M=1.0, delta=0.1):
    """theorem1: r = sqrt(eps / M); theorem2: r = delta M^-1 alpha s^nu
    (independent of eps)."""
    if eps < 0 or alpha <= 0 or s <= 0 or M <= 0 or delta <= 0:
        raise DomainError("choose_radius needs positive inputs")
    if mode == "theorem1":
        return math.sqrt(eps / M)
    if mode == "theorem2":
        return delta * alpha * s ** nu / M
    raise DomainError(f"unknown mode {mode!r}")


def torus_distance(result, setup, sys, grid_size=64):
    """Hausdorff-type distance in the original action coordinates between
    the perturbed torus of frequency omega and the unperturbed torus
    {p = p0(omega)}: sup_theta |v(theta)| + |p0(phi(omega)) - p0(omega)|."""
    n = sys.n
    axes = [np.arange(grid_size) * (2.0 * math.pi / grid_size)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    theta = np.stack([g.ravel() for g in mesh], axis=1)
    zeros = np.zeros_like(theta)
    sup_v = 0.0
    for j in range(n):
        vals = result.v_components[j].evaluate_grid(zeros, theta).real
        sup_v = max(sup_v, float(np.max(np.abs(vals))))
    phi = np.array([complex(x).real for x in result.phi_omega])
    om = np.array(setup.N.omega.omega)
    if np.max(np.abs(phi - om)) == 0.0:
        return sup_v
    p0_phi, _ = sys.solve_anchor(phi, p_init=setup.p0)
    return sup_v + float(np.max(np.abs(p0_phi - setup.p0)))


@dataclass
class ScalingRow:
    eps: float
    mode: str
    r: float
    distance: float
    bound: float
    iterations: int
    residual: float
    feasible: bool
    error: str | None = None

    def to_dict(self):
        return {"eps": self.eps, "mode": self.mode, "r": self.r,
                "distance": self.distance, "bound": self.bound,
                "iterations": self.iterations, "residual": self.residual,
                "feasible": self.feasible, "error": self.error}


@dataclass
class ScalingResult:
    rows: list
    slopes: dict = field(default_factory=dict)

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows],
                "slopes": dict(self.slopes)}


def _fit_slope(eps, dist):
    x = np.log10(np.asarray(eps))
    y = np.log10(np.asarray(dist))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(len(x) - 2, 1)
    se = float(np.sqrt(res[0] / dof / np.sum((x - x.mean()) ** 2))) if len(res) else 0.0
    return float(coef[0]), se


def run_case(sys, f_unit, omega, s, eps, mode, eta=0.1, delta=0.1,
             bound_c=1.0, max_iter=30, stop_tol=1e-10, grid_size=32,
             d_max=4, r_override=None, strict=False, quad_order=8):
    """One (eps, mode) experiment: parameterize, pick the radius, build the
    schedule, iterate, and measure the torus distance."""
    alpha, nu = omega.alpha, omega.nu
    r = r_override if r_override is not None else choose_radius(
        mode, eps, alpha, s, nu, sys.M, delta)
    f = f_unit.scale(eps)
    setup = parameterize(sys, f, omega, r, s, mode=mode, d_max=d_max)
    dom = DomainParams(r=min(r, 1.0), s=s, h=0.0)
    eps0 = setup.P.weighted_norm(r, s)
    schedule = build_schedule(dom, omega, eps0, r, mode=mode, eta=eta,
                              max_iter=max_iter, delta=delta, M=sys.M,
                              strict=strict)
    result, report = run_iteration(
        setup.N, setup.P, schedule, Q0=setup.Q, M=sys.M, stop_tol=stop_tol,
        strict=strict, grid_size=grid_size, quad_order=quad_order)
    dist = torus_distance(result, setup, sys)
    if mode == "theorem1":
        bound = bound_c * math.sqrt(sys.M * eps)
    else:
        bound = bound_c * eps / (alpha * s ** nu)
    row = ScalingRow(eps=eps, mode=mode, r=r, distance=dist, bound=bound,
                     iterations=result.iterations,
                     residual=result.invariance_residual, feasible=True)
    return row, setup, result, report


def scaling_experiment(sys, f_unit, omega, s, eps_list, modes=("theorem1", "theorem2"),
                       eta=0.1, delta=0.1, bound_c=1.0, max_iter=30,
                       stop_tol=1e-10, grid_size=32, workers=1):
    """Sweep eps per mode, fit the log-log slope of the measured distance,
    and report the a-priori bound curves (slope 1/2 for theorem1's
    r = sqrt(eps/M), slope 1 for theorem2's fixed r).

    Rows are independent pure computations keyed by (eps, mode) and run on a
    thread pool of the given size; the output order is fixed by the inputs,
    not by completion order.
    """
    cases = [(mode, eps) for mode in modes for eps in eps_list]

    def one(case):
        mode, eps = case
        try:
            row, *_ = run_case(sys, f_unit, omega, s, eps, mode, eta=eta,
                               delta=delta, bound_c=bound_c,
                               max_iter=max_iter, stop_tol=stop_tol,
                               grid_size=grid_size)
            return row
        except KamError as exc:
            return ScalingRow(eps=eps, mode=mode, r=math.nan,
                              distance=math.nan, bound=math.nan,
                              iterations=0, residual=math.nan,
                              feasible=False, error=str(exc))

    if workers > 1 and len(cases) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, cases))
    else:
        rows = [one(c) for c in cases]
    slopes = {}
    for mode in modes:
        ok = [r for r in rows if r.mode == mode and r.feasible]
        if len(ok) >= 2:
            slope, se = _fit_slope([r.eps for r in ok], [r.distance for r in ok])
            bslope, _ = _fit_slope([r.eps for r in ok], [r.bound for r in ok])
            slopes[mode] = {"distance_slope": slope, "stderr": se,
                            "bound_slope": bslope, "points": len(ok)}
    return ScalingResult(rows=rows, slopes=slopes)
