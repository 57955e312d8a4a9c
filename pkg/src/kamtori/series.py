"""Sparse Fourier-Taylor series with weighted l1 majorant norms.

A series is a finite sum  sum_{k,m} c_{k,m} I^m e^{i k.theta}  where k runs
over integer Fourier indices, m over action exponents with |m|_1 <= d_max.
Every coefficient carries a first-order jet in the frequency parameter, so
Lipschitz information propagates through all algebra by the product rule.

All values are immutable after construction; every operation returns a new
series.  Coefficient iteration order is canonical (sorted by (|k|_1, k, m))
so results are bit-reproducible.
"""

from __future__ import annotations

import cmath
import json
import math

import numpy as np

from .errors import DimensionMismatchError, DivergenceError, DomainError

Key = tuple  # ((k_1..k_n), (m_1..m_n))


class CoefficientJet:
    """A complex value with its first derivative in the frequency parameter.

    Arithmetic follows the product rule exactly, so d(fg) = f dg + g df holds
    coefficientwise for every operation built on it.
    """

    __slots__ = ("value", "domega")

    def __init__(self, value, domega):
        self.value = complex(value)
        self.domega = tuple(complex(d) for d in domega)

    def __add__(self, other):
        return CoefficientJet(self.value + other.value,
                              tuple(a + b for a, b in zip(self.domega, other.domega)))

    def __sub__(self, other):
        return CoefficientJet(self.value - other.value,
                              tuple(a - b for a, b in zip(self.domega, other.domega)))

    def __mul__(self, other):
        if isinstance(other, CoefficientJet):
            return CoefficientJet(
                self.value * other.value,
                tuple(self.value * db + other.value * da
                      for da, db in zip(self.domega, other.domega)))
        c = complex(other)
        return CoefficientJet(c * self.value, tuple(c * d for d in self.domega))

    __rmul__ = __mul__

    def at(self, offset):
        """First-order evaluation at parameter anchor + offset."""
        return self.value + sum(d * o for d, o in zip(self.domega, offset))

    def __repr__(self):
        return f"CoefficientJet({self.value!r}, {self.domega!r})"


def sort_key(key):
    k, m = key
    return (sum(abs(x) for x in k), k, m)


def _zero_jet(n):
    return (0j,) * n


class DomainParams:
    """Analyticity domain: action radius r, angle strip s, parameter ball h."""

    __slots__ = ("r", "s", "h")

    def __init__(self, r, s, h=0.0):
        if not (0.0 < r <= 1.0) or not (0.0 < s <= 1.0):
            raise DomainError(f"need 0 < r,s <= 1, got r={r} s={s}")
        if h < 0.0:
            raise DomainError(f"need h >= 0, got h={h}")
        self.r = float(r)
        self.s = float(s)
        self.h = float(h)


class FourierTaylorSeries:
    """Sparse map (k, m) -> (value, d/domega jet)."""

    __slots__ = ("n", "d_max", "coeffs", "real_symmetric", "tail_estimate")

    def __init__(self, n, coeffs=None, d_max=4, real_symmetric=False,
                 tail_estimate=0.0):
        self.n = int(n)
        self.d_max = int(d_max)
        self.real_symmetric = bool(real_symmetric)
        self.tail_estimate = float(tail_estimate)
        clean = {}
        if coeffs:
            for key, (val, jet) in coeffs.items():
                if val == 0 and all(d == 0 for d in jet):
                    continue
                k, m = key
                if sum(m) > self.d_max:
                    raise DomainError(
                        f"action degree {sum(m)} exceeds d_max={self.d_max}")
                clean[key] = (complex(val), tuple(complex(d) for d in jet))
        self.coeffs = clean

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, n, d_max=4):
        return cls(n, {}, d_max=d_max)

    @classmethod
    def constant(cls, n, value, jet=None, d_max=4):
        key = ((0,) * n, (0,) * n)
        jet = tuple(jet) if jet is not None else _zero_jet(n)
        return cls(n, {key: (value, jet)}, d_max=d_max,
                   real_symmetric=(complex(value).imag == 0
                                   and all(complex(d).imag == 0 for d in jet)))

    @classmethod
    def from_terms(cls, n, terms, d_max=4, real_symmetric=False):
        """terms: iterable of (k, m, value[, jet])."""
        coeffs = {}
        for term in terms:
            k, m, val = term[0], term[1], term[2]
            jet = tuple(term[3]) if len(term) > 3 else _zero_jet(n)
            key = (tuple(int(x) for x in k), tuple(int(x) for x in m))
            old = coeffs.get(key)
            if old is not None:
                val = old[0] + val
                jet = tuple(a + b for a, b in zip(old[1], jet))
            coeffs[key] = (val, jet)
        return cls(n, coeffs, d_max=d_max, real_symmetric=real_symmetric)

    @classmethod
    def cosine(cls, n, k, amplitude=1.0, d_max=4):
        """amplitude * cos(k.theta) as a pair of conjugate modes."""
        k = tuple(int(x) for x in k)
        mk = tuple(-x for x in k)
        m0 = (0,) * n
        half = complex(amplitude) / 2.0
        return cls(n, {(k, m0): (half, _zero_jet(n)),
                       (mk, m0): (half.conjugate(), _zero_jet(n))},
                   d_max=d_max, real_symmetric=True)

    @classmethod
    def action_monomial(cls, n, m, value=1.0, jet=None, d_max=4):
        key = ((0,) * n, tuple(int(x) for x in m))
        jet = tuple(jet) if jet is not None else _zero_jet(n)
        return cls(n, {key: (value, jet)}, d_max=d_max,
                   real_symmetric=(complex(value).imag == 0
                                   and all(complex(d).imag == 0 for d in jet)))

    # -- bookkeeping -------------------------------------------------------

    def items(self):
        """Coefficients in canonical deterministic order."""
        return [(key, self.coeffs[key]) for key in sorted(self.coeffs, key=sort_key)]

    def __len__(self):
        return len(self.coeffs)

    def is_zero(self):
        return not self.coeffs

    def fourier_degree(self):
        return max((sum(abs(x) for x in k) for k, _ in self.coeffs), default=0)

    def action_degree(self):
        return max((sum(m) for _, m in self.coeffs), default=0)

    def with_tail(self, extra):
        out = FourierTaylorSeries(self.n, d_max=self.d_max,
                                  real_symmetric=self.real_symmetric,
                                  tail_estimate=self.tail_estimate + float(extra))
        out.coeffs = self.coeffs
        return out

    def check_real_symmetry(self, tol=0.0):
        """Max defect of coeff(-k,m) == conj(coeff(k,m)) over stored keys."""
        worst = 0.0
        for (k, m), (val, jet) in self.coeffs.items():
            mk = tuple(-x for x in k)
            oval, ojet = self.coeffs.get((mk, m), (0j, _zero_jet(self.n)))
            worst = max(worst, abs(oval - val.conjugate()))
            for a, b in zip(ojet, jet):
                worst = max(worst, abs(a - b.conjugate()))
        return worst

    # -- linear structure --------------------------------------------------

    def _binop(self, other, sign):
        if self.n != other.n:
            raise DimensionMismatchError(f"n={self.n} vs n={other.n}")
        coeffs = dict(self.coeffs)
        for key, (val, jet) in other.coeffs.items():
            oval, ojet = coeffs.get(key, (0j, _zero_jet(self.n)))
            coeffs[key] = (oval + sign * val,
                           tuple(a + sign * b for a, b in zip(ojet, jet)))
        return FourierTaylorSeries(
            self.n, coeffs, d_max=max(self.d_max, other.d_max),
            real_symmetric=self.real_symmetric and other.real_symmetric,
            tail_estimate=self.tail_estimate + other.tail_estimate)

    def __add__(self, other):
        return self._binop(other, 1.0)

    def __sub__(self, other):
        return self._binop(other, -1.0)

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c):
        c = complex(c)
        coeffs = {key: (c * val, tuple(c * d for d in jet))
                  for key, (val, jet) in self.coeffs.items()}
        return FourierTaylorSeries(
            self.n, coeffs, d_max=self.d_max,
            real_symmetric=self.real_symmetric and c.imag == 0.0,
            tail_estimate=abs(c) * self.tail_estimate)

    def __mul__(self, c):
        if isinstance(c, FourierTaylorSeries):
            return self.multiply(c)
        return self.scale(c)

    __rmul__ = __mul__

    # -- products ----------------------------------------------------------

    def multiply(self, other, r=1.0, s=0.0):
        """Product; action degree capped at d_max, overflow weight (valued at
        the reference radii r, s) goes to tail_estimate."""
        if self.n != other.n:
            raise DimensionMismatchError(f"n={self.n} vs n={other.n}")
        n = self.n
        d_max = max(self.d_max, other.d_max)
        coeffs = {}
        overflow = 0.0
        for (kf, mf), (vf, jf) in self.coeffs.items():
            for (kg, mg), (vg, jg) in other.coeffs.items():
                m = tuple(a + b for a, b in zip(mf, mg))
                val = vf * vg
                jet = tuple(vf * dg + vg * df for df, dg in zip(jf, jg))
                if sum(m) > d_max:
                    k1 = sum(abs(a + b) for a, b in zip(kf, kg))
                    w = abs(val) * (r ** sum(m)) * math.exp(s * k1)
                    overflow += w
                    continue
                key = (tuple(a + b for a, b in zip(kf, kg)), m)
                oval, ojet = coeffs.get(key, (0j, _zero_jet(n)))
                coeffs[key] = (oval + val,
                               tuple(a + b for a, b in zip(ojet, jet)))
        return FourierTaylorSeries(
            n, coeffs, d_max=d_max,
            real_symmetric=self.real_symmetric and other.real_symmetric,
            tail_estimate=self.tail_estimate + other.tail_estimate + overflow)

    # -- derivatives -------------------------------------------------------

    def dtheta(self, j):
        coeffs = {}
        for (k, m), (val, jet) in self.coeffs.items():
            if k[j] == 0:
                continue
            fac = 1j * k[j]
            coeffs[(k, m)] = (fac * val, tuple(fac * d for d in jet))
        return FourierTaylorSeries(self.n, coeffs, d_max=self.d_max,
                                   real_symmetric=self.real_symmetric,
                                   tail_estimate=self.tail_estimate)

    def daction(self, j):
        coeffs = {}
        for (k, m), (val, jet) in self.coeffs.items():
            if m[j] == 0:
                continue
            fac = float(m[j])
            mm = tuple(x - 1 if i == j else x for i, x in enumerate(m))
            key = (k, mm)
            oval, ojet = coeffs.get(key, (0j, _zero_jet(self.n)))
            coeffs[key] = (oval + fac * val,
                           tuple(a + fac * d for a, d in zip(ojet, jet)))
        return FourierTaylorSeries(self.n, coeffs, d_max=self.d_max,
                                   real_symmetric=self.real_symmetric,
                                   tail_estimate=self.tail_estimate)

    # -- norms and truncation ----------------------------------------------

    def weighted_norm(self, r, s):
        """Majorant norm sum |c| r^|m| e^{s|k|}; dominates sup on D_{r,s}."""
        if r <= 0.0 or s < 0.0:
            raise DomainError(f"need r > 0 and s >= 0, got r={r} s={s}")
        total = 0.0
        for (k, m), (val, _) in self.coeffs.items():
            total += abs(val) * (r ** sum(m)) * math.exp(s * sum(abs(x) for x in k))
        return total

    def jet_norm(self, r, s):
        """Majorant norm of the parameter derivative, sum |dc|_1 weights."""
        if r <= 0.0 or s < 0.0:
            raise DomainError(f"need r > 0 and s >= 0, got r={r} s={s}")
        total = 0.0
        for (k, m), (_, jet) in self.coeffs.items():
            total += (sum(abs(d) for d in jet)
                      * (r ** sum(m)) * math.exp(s * sum(abs(x) for x in k)))
        return total

    def angle_average(self):
        zero = (0,) * self.n
        coeffs = {key: cj for key, cj in self.coeffs.items() if key[0] == zero}
        return FourierTaylorSeries(self.n, coeffs, d_max=self.d_max,
                                   real_symmetric=self.real_symmetric,
                                   tail_estimate=0.0)

    def truncate(self, K, d, r, s):
        """Sharp cutoff |k|_1 <= K, |m|_1 <= d.  Returns (series, droppedNorm)
        with the dropped majorant weight at (r, s) added to tail_estimate."""
        if K < 0 or d < 0:
            raise DomainError(f"need K, d >= 0, got K={K} d={d}")
        kept, dropped = {}, 0.0
        for (k, m), cj in self.coeffs.items():
            if sum(abs(x) for x in k) <= K and sum(m) <= d:
                kept[(k, m)] = cj
            else:
                dropped += (abs(cj[0]) * (r ** sum(m))
                            * math.exp(s * sum(abs(x) for x in k)))
        out = FourierTaylorSeries(self.n, kept, d_max=self.d_max,
                                  real_symmetric=self.real_symmetric,
                                  tail_estimate=self.tail_estimate + dropped)
        return out, dropped

    def compress(self, tol, r, s):
        """Drop the smallest-weight coefficients while their total majorant
        weight stays <= tol; dropped weight goes to tail_estimate.  For a
        real-symmetric series conjugate pairs are dropped together."""
        if tol <= 0.0 or not self.coeffs:
            return self
        weighted = []
        for key, cj in self.items():
            (k, m), (val, jet) = key, cj
            w = ((abs(val) + sum(abs(d) for d in jet))
                 * (r ** sum(m)) * math.exp(s * sum(abs(x) for x in k)))
            weighted.append((w, key))
        weighted.sort(key=lambda t: (t[0], sort_key(t[1])))
        drop, budget = set(), float(tol)
        for w, key in weighted:
            if key in drop:
                continue
            mirror = (tuple(-x for x in key[0]), key[1])
            cost = w
            if self.real_symmetric and mirror != key and mirror in self.coeffs:
                cost *= 2.0
            if cost > budget:
                break
            budget -= cost
            drop.add(key)
            if self.real_symmetric and mirror in self.coeffs:
                drop.add(mirror)
        if not drop:
            return self
        kept = {key: cj for key, cj in self.coeffs.items() if key not in drop}
        return FourierTaylorSeries(self.n, kept, d_max=self.d_max,
                                   real_symmetric=self.real_symmetric,
                                   tail_estimate=self.tail_estimate + (tol - budget))

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, I, theta, param_offset=None):
        """sum c I^m e^{i k.theta}, exact for the finite stored sum.

        param_offset shifts the parameter away from the anchor; values are
        corrected to first order through the jets."""
        I = [complex(x) for x in I]
        theta = [complex(x) for x in theta]
        total = 0j
        for (k, m), (val, jet) in self.coeffs.items():
            if param_offset is not None:
                val = val + sum(d * o for d, o in zip(jet, param_offset))
            term = val
            for j in range(self.n):
                if m[j]:
                    term *= I[j] ** m[j]
            phase = sum(k[j] * theta[j] for j in range(self.n))
            total += term * cmath.exp(1j * phase)
        return total

    def evaluate_grid(self, I, theta, param_offset=None):
        """Vectorized evaluation; I, theta are (N, n) real or complex arrays."""
        I = np.asarray(I)
        theta = np.asarray(theta)
        total = np.zeros(theta.shape[0], dtype=complex)
        for (k, m), (val, jet) in self.items():
            if param_offset is not None:
                val = val + sum(d * o for d, o in zip(jet, param_offset))
            term = np.full(theta.shape[0], val, dtype=complex)
            for j in range(self.n):
                if m[j]:
                    term = term * I[:, j] ** m[j]
            phase = theta @ np.array(k, dtype=float)
            total += term * np.exp(1j * phase)
        return total

    # -- serialization -------------------------------------------------------

    def to_records(self):
        records = []
        for (k, m), (val, jet) in self.items():
            records.append([list(k), list(m), val.real, val.imag,
                            [d.real for d in jet], [d.imag for d in jet]])
        return {"n": self.n, "d_max": self.d_max,
                "real_symmetric": self.real_symmetric,
                "tail_estimate": self.tail_estimate, "records": records}

    @classmethod
    def from_records(cls, data):
        n = int(data["n"])
        coeffs = {}
        for k, m, re, im, jre, jim in data["records"]:
            key = (tuple(int(x) for x in k), tuple(int(x) for x in m))
            coeffs[key] = (complex(re, im),
                           tuple(complex(a, b) for a, b in zip(jre, jim)))
        return cls(n, coeffs, d_max=int(data["d_max"]),
                   real_symmetric=bool(data["real_symmetric"]),
                   tail_estimate=float(data.get("tail_estimate", 0.0)))

    def to_json(self):
        return json.dumps(self.to_records(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        return cls.from_records(json.loads(text))

    def __repr__(self):
        return (f"FourierTaylorSeries(n={self.n}, terms={len(self.coeffs)}, "
                f"d_max={self.d_max}, tail={self.tail_estimate:.3g})")


# -- module-level operations --------------------------------------------------

def poisson_bracket(f, g, r=1.0, s=0.0):
    """{f,g} = sum_j df/dtheta_j dg/dI_j - df/dI_j dg/dtheta_j."""
    if f.n != g.n:
        raise DimensionMismatchError(f"n={f.n} vs n={g.n}")
    out = FourierTaylorSeries.zero(f.n, d_max=max(f.d_max, g.d_max))
    for j in range(f.n):
        out = out + f.dtheta(j).multiply(g.daction(j), r, s)
        out = out - f.daction(j).multiply(g.dtheta(j), r, s)
    return out


def lie_transform(H, F, r, s, t=1.0, tail_tol=1e-14, max_terms=120):
    """H o X_F^t = sum_j t^j ad_F^j H / j! summed until the current term's
    majorant norm at (r, s) drops below tail_tol.

    Returns (series, tailBound); tailBound extrapolates the geometric tail
    from the last observed ratio and is added to the result's tail_estimate.
    Raises DivergenceError when the term norms fail to contract.
    """
    if F.is_zero() or t == 0.0:
        return H, 0.0
    total = H
    term = H
    prev_norm = H.weighted_norm(r, s)
    if prev_norm == 0.0:
        return H, 0.0
    drop_tol = tail_tol * 1e-3
    rho = 0.0
    grew = 0
    for j in range(1, max_terms + 1):
        term = poisson_bracket(term, F, r, s).scale(t / j)
        term = term.compress(drop_tol, r, s)
        norm = term.weighted_norm(r, s)
        if norm == 0.0:
            return total.with_tail(term.tail_estimate), 0.0
        total = total + term
        rho = norm / prev_norm if prev_norm > 0 else 1.0
        if norm <= tail_tol:
            tail = norm * rho / (1.0 - rho) if rho < 1.0 else norm
            return total.with_tail(tail), tail
        grew = grew + 1 if rho >= 1.0 else 0
        if grew >= 3:
            raise DivergenceError(
                f"Lie series not contracting at (r={r}, s={s}): "
                f"|term_{j}| = {norm:.3e} >= |term_{j-1}| = {prev_norm:.3e}, "
                f"|F| = {F.weighted_norm(r, s):.3e}")
        prev_norm = norm
    raise DivergenceError(
        f"Lie series did not reach tail_tol={tail_tol:.3e} in {max_terms} "
        f"terms (last term {prev_norm:.3e}, ratio {rho:.3f})")
