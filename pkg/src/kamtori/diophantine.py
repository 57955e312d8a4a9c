"""Diophantine frequency vectors: construction, finite certification,
small-divisor arithmetic.

Certification is finite: the inequality |k.omega| >= alpha |k|_1^{-tau} is
checked exhaustively for 0 < |k|_1 <= K.  That is sufficient here because
every series in the engine is a trigonometric polynomial of bounded degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError


def _k_blocks(n, K, chunk=200_000):
    """Yield integer arrays of candidate k with 0 < |k|_1 <= K.

    Only one representative of each +-k pair is produced (first nonzero
    component positive): |k.omega| and |k|_1 are sign-symmetric.
    """
    if n == 1:
        yield np.arange(1, K + 1, dtype=np.int64).reshape(-1, 1)
        return
    # first coordinate k_1 >= 0; k_1 == 0 recurses into dimension n-1
    rest_axes = [np.arange(-K, K + 1, dtype=np.int64)] * (n - 1)
    grids = np.meshgrid(*rest_axes, indexing="ij")
    rest = np.stack([g.ravel() for g in grids], axis=1)
    rest_l1 = np.abs(rest).sum(axis=1)
    for k1 in range(0, K + 1):
        sel = rest_l1 <= K - k1
        block = rest[sel]
        if k1 == 0:
            # representative: first nonzero of the remaining part positive
            flat = block
            lead = np.zeros(len(flat), dtype=bool)
            undecided = np.ones(len(flat), dtype=bool)
            for j in range(n - 1):
                pos = undecided & (flat[:, j] > 0)
                lead |= pos
                undecided &= flat[:, j] == 0
            block = flat[lead]
        if len(block) == 0:
            continue
        full = np.concatenate(
            [np.full((len(block), 1), k1, dtype=np.int64), block], axis=1)
        l1 = np.abs(full).sum(axis=1)
        full = full[(l1 > 0) & (l1 <= K)]
        for i in range(0, len(full), chunk):
            yield full[i:i + chunk]


@dataclass(frozen=True)
class FrequencyVector:
    """A frequency vector together with its finite Diophantine certificate."""

    omega: tuple
    alpha: float
    tau: float
    K_verified: int
    worst_k: tuple = ()
    worst_margin: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(x) for x in self.omega))
        if self.alpha <= 0.0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if self.tau < len(self.omega) - 1:
            raise DomainError(
                f"tau must be >= n-1 = {len(self.omega)-1}, got {self.tau}")

    @property
    def n(self):
        return len(self.omega)

    @property
    def nu(self):
        return self.tau + 1.0

    def to_dict(self):
        return {"omega": list(self.omega), "alpha": self.alpha,
                "tau": self.tau, "K_verified": self.K_verified,
                "worst_k": list(self.worst_k), "worst_margin": self.worst_margin}

    def ensure_verified(self, K):
        """Return a vector certified at least up to cutoff K."""
        if K <= self.K_verified:
            return self
        cert = certify(self.omega, self.alpha, self.tau, K)
        if not cert.ok:
            raise DomainError(
                f"omega={self.omega} violates the Diophantine inequality at "
                f"k={cert.counterexample} (alpha={self.alpha}, tau={self.tau})")
        return replace(self, K_verified=K, worst_k=cert.worst_k,
                       worst_margin=cert.worst_margin)


@dataclass
class Certificate:
    ok: bool
    omega: tuple
    alpha: float
    tau: float
    K_verified: int
    worst_k: tuple = ()
    worst_margin: float = math.inf
    counterexample: tuple | None = None

    def to_dict(self):
        out = {"omega": list(self.omega), "alpha": self.alpha, "tau": self.tau,
               "K_verified": self.K_verified, "worst_k": list(self.worst_k),
               "worst_margin": self.worst_margin}
        if self.counterexample is not None:
            out["counterexample"] = list(self.counterexample)
        return out


def small_divisor(k, omega):
    """|k.omega| for k != 0."""
    if all(x == 0 for x in k):
        raise DomainError("k = 0 is excluded: remove the angle average first")
    om = omega.omega if isinstance(omega, FrequencyVector) else omega
    return abs(sum(int(ki) * wi for ki, wi in zip(k, om)))


def certify(omega, alpha, tau, K):
    """Exhaustive scan of 0 < |k|_1 <= K against |k.omega| >= alpha|k|_1^-tau.

    Returns a Certificate; on failure it carries the first violating k in
    canonical scan order.
    """
    if K < 1:
        raise DomainError(f"need K >= 1, got K={K}")
    if alpha <= 0.0:
        raise DomainError(f"need alpha > 0, got alpha={alpha}")
    om = np.asarray([float(x) for x in omega])
    n = len(om)
    worst_margin = math.inf
    worst_k: tuple = ()
    for block in _k_blocks(n, K):
        dots = np.abs(block @ om)
        l1 = np.abs(block).sum(axis=1).astype(float)
        margins = dots * l1 ** tau / alpha
        bad = np.nonzero(margins < 1.0)[0]
        if len(bad) > 0:
            # first violation in (|k|_1, k) order
            order = sorted(bad, key=lambda i: (l1[i], tuple(block[i])))
            k = tuple(int(x) for x in block[order[0]])
            return Certificate(False, tuple(om), alpha, tau, K,
                               counterexample=k)
        i = int(np.argmin(margins))
        if margins[i] < worst_margin:
            worst_margin = float(margins[i])
            worst_k = tuple(int(x) for x in block[i])
    return Certificate(True, tuple(om), alpha, tau, K,
                       worst_k=worst_k, worst_margin=worst_margin)


def max_alpha(omega, tau, K):
    """min over 0 < |k|_1 <= K of |k.omega| |k|_1^tau; certify() succeeds for
    any alpha below the returned value.  Returns 0 on an exact resonance."""
    if K < 1:
        raise DomainError(f"need K >= 1, got K={K}")
    om = np.asarray([float(x) for x in omega])
    best = math.inf
    for block in _k_blocks(len(om), K):
        dots = np.abs(block @ om)
        l1 = np.abs(block).sum(axis=1).astype(float)
        best = min(best, float(np.min(dots * l1 ** tau)))
        if best == 0.0:
            return 0.0
    return best


_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)


def quadratic_irrational_frequency(n):
    """Deterministic strongly non-resonant fixture: (1, golden) for n=2,
    (1, sqrt 2, sqrt 3, ...) otherwise."""
    if n < 1:
        raise DomainError(f"need n >= 1, got n={n}")
    if n == 1:
        return (1.0,)
    if n == 2:
        return (1.0, (1.0 + math.sqrt(5.0)) / 2.0)
    return (1.0,) + tuple(math.sqrt(p) for p in _PRIMES[:n - 1])


def certified_frequency(omega, tau, K, alpha=None, safety=0.99):
    """Build a FrequencyVector, defaulting alpha to safety * max_alpha."""
    if alpha is None:
        cap = max_alpha(omega, tau, K)
        if cap == 0.0:
            raise DomainError(f"omega={tuple(omega)} is resonant up to K={K}")
        alpha = safety * cap
    cert = certify(omega, alpha, tau, K)
    if not cert.ok:
        raise DomainError(
            f"certification failed at k={cert.counterexample} for "
            f"omega={tuple(omega)}, alpha={alpha}, tau={tau}")
    return FrequencyVector(tuple(omega), float(alpha), float(tau), K,
                           worst_k=cert.worst_k, worst_margin=cert.worst_margin)
