"""Density-dependent offspring laws.

An offspring model maps the current population density ``x >= 0`` to a
distribution ``p_l(x)`` on the non-negative integers.  Every model is
normalized so that the mean at zero density is ``rho > 1``; the
density-regulated families additionally have mean 1 at density 1.

Two mechanisms cover all built-in families:

* a geometric law whose success parameter ``q(x)`` decays exponentially
  in ``x`` (``Geometric``; ``DensityIndependent`` with a geometric base);
* a *thinned* law: with probability ``1 - exp(-gamma x)`` the individual
  is sterile, otherwise it draws from a fixed base distribution
  (``Ricker``, ``BinarySplitting``; ``DensityIndependent`` with a Poisson
  or binary base uses ``gamma = 0``).

Sampling is by inversion against ``cdf_table(x)``, the CDF at a frozen
density truncated once the tail mass drops below ``TAIL_MASS`` (the
remainder is folded into the last atom).  ``quantile`` and the simulation
kernels (see :mod:`ddbranch.kernels`) search the same table, so every
backend draws identical samples.  Tables are elementwise nondecreasing in
``x`` after rounding, which makes ``quantile`` exactly nonincreasing in
``x`` and the coupling exact in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Mapping

import numpy as np
from scipy import optimize, stats

from .errors import DomainError

TAIL_MASS = 1e-12
MAX_SUPPORT = 10_000


class Family(str, Enum):
    GEOMETRIC = "geometric"
    RICKER = "ricker"
    BINARY_SPLITTING = "binary_splitting"
    DENSITY_INDEPENDENT = "density_independent"


def _check_density(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x >= 0)):
        raise DomainError("density must be a non-negative number")
    return x


def _check_count(ell):
    ell = np.asarray(ell)
    if ell.dtype.kind == "f":
        if np.any(ell != np.floor(ell)):
            raise DomainError("offspring count must be an integer")
        ell = ell.astype(np.int64)
    if np.any(ell < 0):
        raise DomainError("offspring count must be non-negative")
    return ell


def _check_uniform(u):
    u = np.asarray(u, dtype=float)
    if np.any(~((u >= 0) & (u < 1))):
        raise DomainError("quantile level must lie in [0, 1)")
    return u


def _unwrap(a):
    a = np.asarray(a)
    return a.item() if a.ndim == 0 else a


@dataclass(frozen=True, eq=False)
class OffspringModel:
    """Base class for offspring families.

    Subclasses supply the distribution itself; derived quantities such as
    ``variance`` and the reproduction map ``f(x) = x m(x)`` live here.
    All methods accept scalars or numpy arrays and broadcast.
    """

    family: Family
    rho: float
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.rho > 1):
            raise DomainError(f"rho must exceed 1, got {self.rho!r}")

    def __eq__(self, other):
        if not isinstance(other, OffspringModel):
            return NotImplemented
        return self.spec() == other.spec()

    def __hash__(self):
        return hash(tuple(sorted(self.spec().items())))

    def spec(self) -> dict:
        """Plain-dict description, the inverse of :func:`make_model`."""
        return {"family": self.family.value, "rho": self.rho, **dict(self.params)}

    # distribution ---------------------------------------------------------

    def pmf(self, x, ell):
        raise NotImplementedError

    def cdf(self, x, t):
        raise NotImplementedError

    # moments ----------------------------------------------------------------

    def mean(self, x):
        raise NotImplementedError

    def second_moment(self, x):
        raise NotImplementedError

    def variance(self, x):
        m = self.mean(x)
        return self.second_moment(x) - m * m

    def mean_prime(self, x):
        raise NotImplementedError

    def mean_second(self, x):
        raise NotImplementedError

    # reproduction map ---------------------------------------------------------

    def f(self, x):
        """One-step density map ``x * m(x)``; exactly ``rho x`` for linear models."""
        x = _check_density(x)
        if self.is_linear:
            return _unwrap(self.rho * x)
        return _unwrap(x * self.mean(x))

    def f_prime(self, x):
        x = _check_density(x)
        return _unwrap(self.mean(x) + x * self.mean_prime(x))

    def f_second(self, x):
        x = _check_density(x)
        return _unwrap(2.0 * self.mean_prime(x) + x * self.mean_second(x))

    @property
    def is_linear(self) -> bool:
        """True when the law does not depend on density, so ``f(x) = rho x``."""
        return False

    @cached_property
    def f_second_sup(self) -> float:
        """``sup |f''|`` over the half line, located on a dense grid.

        The built-in maps have ``f''`` decaying exponentially, so a grid
        on [0, 60] captures the supremum.
        """
        if self.is_linear:
            return 0.0
        grid = np.linspace(0.0, 60.0, 60_001)
        return float(np.max(np.abs(self.f_second(grid))))

    # sampling hooks -------------------------------------------------------------

    def cdf_table(self, x: float) -> np.ndarray:
        """Truncated CDF ``F_x(0..T)`` at a frozen density, ending at exactly 1."""
        raise NotImplementedError

    @cached_property
    def cdf_table_at_zero(self) -> np.ndarray:
        table = self.cdf_table(0.0)
        table.setflags(write=False)
        return table

    def quantile(self, x, u):
        """Smallest ``t`` with ``F_x(t) >= u``, by search in :meth:`cdf_table`."""
        x = _check_density(x)
        u = _check_uniform(u)
        if x.ndim == 0:
            return _unwrap(np.searchsorted(self.cdf_table(float(x)), u, side="left"))
        x, u = np.broadcast_arrays(x, u)
        out = np.empty(x.shape, dtype=np.int64)
        for xv in np.unique(x):
            sel = x == xv
            out[sel] = np.searchsorted(self.cdf_table(float(xv)), u[sel], side="left")
        return out

    def sample_sum_at_zero(self, rng: np.random.Generator, count: int) -> int:
        """Total offspring of ``count`` independent density-zero individuals."""
        raise NotImplementedError

    def sample_sum(self, rng: np.random.Generator, x: float, count: int) -> int:
        """Total offspring of ``count`` independent individuals at density ``x``."""
        raise NotImplementedError

    def pgf_at_zero(self, s):
        """Probability generating function of the density-zero law."""
        raise NotImplementedError


class GeometricLaw(OffspringModel):
    """``p_l(x) = q(x)^l (1 - q(x))`` with ``q(x) = q0 exp(-decay x)``."""

    def __init__(self, family, rho, decay, params=None):
        super().__init__(family, float(rho), dict(params or {}))
        object.__setattr__(self, "decay", float(decay))
        object.__setattr__(self, "log_q0", math.log(self.rho) - math.log1p(self.rho))

    @property
    def is_linear(self):
        return self.decay == 0.0

    def log_q(self, x):
        return self.log_q0 - self.decay * x

    def cdf_table(self, x):
        lq = self.log_q0 - self.decay * float(x)
        if lq == -math.inf:
            return np.ones(1)
        n = min(max(int(math.ceil(math.log(TAIL_MASS) / lq)), 1), MAX_SUPPORT)
        table = -np.expm1(np.arange(1.0, n + 1.0) * lq)
        table[-1] = 1.0
        return table

    def _q(self, x):
        lq = self.log_q(x)
        return np.exp(lq), -np.expm1(lq)

    def pmf(self, x, ell):
        x = _check_density(x)
        ell = _check_count(ell)
        lq = self.log_q(x)
        return _unwrap(np.exp(ell * lq) * -np.expm1(lq))

    def cdf(self, x, t):
        x = _check_density(x)
        t = np.asarray(t, dtype=float)
        if np.any(~(t >= 0)):
            raise DomainError("cdf argument must be non-negative")
        return _unwrap(-np.expm1((np.floor(t) + 1.0) * self.log_q(x)))


    def mean(self, x):
        x = np.asarray(x, dtype=float)
        q, p = self._q(x)
        return _unwrap(q / p)

    def second_moment(self, x):
        x = np.asarray(x, dtype=float)
        q, p = self._q(x)
        return _unwrap(q * (1.0 + q) / (p * p))

    def mean_prime(self, x):
        q, p = self._q(np.asarray(x, dtype=float))
        return -self.decay * q / (p * p)

    def mean_second(self, x):
        q, p = self._q(np.asarray(x, dtype=float))
        return self.decay**2 * q * (1.0 + q) / p**3

    def sample_sum_at_zero(self, rng, count):
        if count == 0:
            return 0
        return int(rng.negative_binomial(count, -math.expm1(self.log_q0)))

    def sample_sum(self, rng, x, count):
        if count == 0:
            return 0
        return int(rng.negative_binomial(count, -math.expm1(self.log_q0 - self.decay * x)))

    def pgf_at_zero(self, s):
        q = math.exp(self.log_q0)
        return (1.0 - q) / (1.0 - q * s)


class ThinnedLaw(OffspringModel):
    """Sterile with probability ``1 - exp(-gamma x)``, else a draw from a base law.

    ``base_pmf`` is truncated once the cumulative mass reaches
    ``1 - TAIL_MASS``; the residual tail is folded into the last atom so
    the base CDF table ends at exactly 1.  Moments use the exact base
    moments ``base_mean`` and ``base_m2``.
    """

    def __init__(self, family, rho, gamma, base_pmf, base_mean, base_m2, params=None):
        super().__init__(family, float(rho), dict(params or {}))
        pmf = np.asarray(base_pmf, dtype=float)
        cum = np.cumsum(pmf)
        last = int(np.searchsorted(cum, 1.0 - TAIL_MASS, side="left"))
        last = min(last, len(pmf) - 1)
        pmf = pmf[: last + 1].copy()
        pmf[-1] += max(0.0, 1.0 - cum[last])
        table = np.cumsum(pmf)
        table[-1] = 1.0
        table.setflags(write=False)
        pmf.setflags(write=False)
        object.__setattr__(self, "gamma", float(gamma))
        object.__setattr__(self, "base_pmf", pmf)
        object.__setattr__(self, "base_cdf", table)
        object.__setattr__(self, "base_mean", float(base_mean))
        object.__setattr__(self, "base_m2", float(base_m2))

    @property
    def is_linear(self):
        return self.gamma == 0.0

    def fertile(self, x):
        """Probability ``exp(-gamma x)`` that an individual is not sterile."""
        return np.exp(-self.gamma * np.asarray(x, dtype=float))

    def cdf_table(self, x):
        s = math.exp(-self.gamma * float(x))
        table = 1.0 - s * (1.0 - self.base_cdf)
        table[-1] = 1.0
        return table

    def pmf(self, x, ell):
        x = _check_density(x)
        ell = _check_count(ell)
        s = self.fertile(x)
        n = len(self.base_pmf)
        base = self.base_pmf[np.minimum(ell, n - 1)] * (ell < n)
        return _unwrap(s * base + (1.0 - s) * (ell == 0))

    def cdf(self, x, t):
        x = _check_density(x)
        t = np.asarray(t, dtype=float)
        if np.any(~(t >= 0)):
            raise DomainError("cdf argument must be non-negative")
        s = self.fertile(x)
        n = len(self.base_cdf)
        idx = np.minimum(np.floor(t), n - 1).astype(np.int64)
        return _unwrap(1.0 - s * (1.0 - self.base_cdf[idx]))


    def mean(self, x):
        return _unwrap(self.base_mean * self.fertile(x))

    def second_moment(self, x):
        return _unwrap(self.base_m2 * self.fertile(x))

    def mean_prime(self, x):
        return -self.gamma * self.base_mean * self.fertile(x)

    def mean_second(self, x):
        return self.gamma**2 * self.base_mean * self.fertile(x)

    def sample_sum_at_zero(self, rng, count):
        return self.sample_sum(rng, 0.0, count)

    def sample_sum(self, rng, x, count):
        if count == 0:
            return 0
        fertile = int(rng.binomial(count, math.exp(-self.gamma * x)))
        if fertile == 0:
            return 0
        counts = rng.multinomial(fertile, self.base_pmf)
        return int(np.dot(counts, np.arange(len(counts))))

    def pgf_at_zero(self, s):
        return float(np.polynomial.polynomial.polyval(s, self.base_pmf))


# constructors ----------------------------------------------------------------


def _poisson_base(lam):
    support = np.arange(MAX_SUPPORT + 1)
    return stats.poisson.pmf(support, lam)


def _truncated_poisson_base(rho):
    # zero-truncated Poisson with mean rho: lam / (1 - exp(-lam)) = rho
    lam = optimize.brentq(lambda t: t / -math.expm1(-t) - rho, 1e-12, rho, xtol=1e-15)
    pmf = _poisson_base(lam)
    pmf[0] = 0.0
    pmf /= -math.expm1(-lam)
    m2 = (lam + lam * lam) / -math.expm1(-lam)
    return pmf, m2


def _binary_base(rho):
    if rho > 2:
        raise DomainError("binary splitting requires rho <= 2")
    half = rho / 2.0
    return np.array([1.0 - half, 0.0, half]), 2.0 * rho


def geometric(rho: float) -> GeometricLaw:
    """Geometric family with ``q(0) = rho/(1+rho)`` and ``q(1) = 1/2``."""
    decay = math.log(2.0 * rho / (1.0 + rho))
    return GeometricLaw(Family.GEOMETRIC, rho, decay)


def ricker(rho: float, base: str = "poisson") -> ThinnedLaw:
    """Stochastic Ricker family with ``m(x) = rho^(1-x)``.

    ``base`` selects the fertile offspring law, both with mean ``rho``:
    ``"poisson"`` (zero offspring allowed) or ``"truncated_poisson"``
    (supported on ``l >= 1``).
    """
    gamma = math.log(rho)
    if base == "poisson":
        pmf, m2 = _poisson_base(rho), rho + rho * rho
    elif base == "truncated_poisson":
        pmf, m2 = _truncated_poisson_base(rho)
    else:
        raise DomainError(f"unknown Ricker base distribution {base!r}")
    return ThinnedLaw(Family.RICKER, rho, gamma, pmf, rho, m2, {"base": base})


def binary_splitting(rho: float) -> ThinnedLaw:
    """``p_2(x) = rho^(1-x)/2``, ``p_0 = 1 - p_2``; needs ``1 < rho <= 2``."""
    pmf, m2 = _binary_base(rho)
    return ThinnedLaw(Family.BINARY_SPLITTING, rho, math.log(rho), pmf, rho, m2)


def density_independent(rho: float, base: str = "geometric") -> OffspringModel:
    """Offspring law frozen at its zero-density form; ``f(x) = rho x``."""
    params = {"base": base}
    if base == "geometric":
        return GeometricLaw(Family.DENSITY_INDEPENDENT, rho, 0.0, params)
    if base == "poisson":
        return ThinnedLaw(
            Family.DENSITY_INDEPENDENT, rho, 0.0, _poisson_base(rho), rho, rho + rho * rho, params
        )
    if base == "binary":
        pmf, m2 = _binary_base(rho)
        return ThinnedLaw(Family.DENSITY_INDEPENDENT, rho, 0.0, pmf, rho, m2, params)
    raise DomainError(f"unknown density-independent base distribution {base!r}")


_FACTORIES = {
    Family.GEOMETRIC: (geometric, ()),
    Family.RICKER: (ricker, ("base",)),
    Family.BINARY_SPLITTING: (binary_splitting, ()),
    Family.DENSITY_INDEPENDENT: (density_independent, ("base",)),
}


def make_model(family: str | Family, rho: float = 2.0, **params) -> OffspringModel:
    """Build a model from its family name and parameters."""
    try:
        fam = Family(family)
    except ValueError:
        raise DomainError(f"unknown offspring family {family!r}") from None
    factory, allowed = _FACTORIES[fam]
    unknown = set(params) - set(allowed)
    if unknown:
        raise DomainError(f"unexpected parameters for {fam.value}: {sorted(unknown)}")
    if not (rho > 1):
        raise DomainError(f"rho must exceed 1, got {rho!r}")
    return factory(float(rho), **params)


# assumption checks -----------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionReport:
    """Grid-based evidence for the stochastic-ordering, Lipschitz and smoothness conditions.

    ``a1_worst_violation`` is the largest ``F_x(t) - F_y(t)`` over grid
    pairs ``y >= x`` (zero when the ordering holds).  The ``a3`` fields
    come from finite differences of ``f``.
    """

    grid: np.ndarray
    t_max: int
    tol: float
    a1_ok: bool
    a1_worst_violation: float
    a2_lipschitz_estimate: float
    a3_ok: bool
    f_prime_sup: float
    f_prime_at_zero: float
    f_second_sup: float

    def rows(self):
        """(check, ok, quantity, value) tuples for display and CSV output."""
        return [
            ("a1", self.a1_ok, "worst_violation", self.a1_worst_violation),
            ("a2", True, "lipschitz_estimate", self.a2_lipschitz_estimate),
            ("a3", self.a3_ok, "f_prime_sup", self.f_prime_sup),
            ("a3", self.a3_ok, "f_prime_at_zero", self.f_prime_at_zero),
            ("a3", self.a3_ok, "f_second_sup", self.f_second_sup),
        ]


FD_STEP = 1e-5
FD_STEP_SECOND = 1e-4
FD_TOL = 1e-6


def _derivative(fn, x, h):
    # central differences; second-order one-sided stencil where x - h < 0
    x = np.asarray(x, dtype=float)
    central = (fn(x + h) - fn(np.maximum(x - h, 0.0))) / (2 * h)
    forward = (-3 * fn(x) + 4 * fn(x + h) - fn(x + 2 * h)) / (2 * h)
    return np.where(x - h >= 0, central, forward)


def _second_derivative(fn, x, h):
    x = np.asarray(x, dtype=float)
    central = (fn(x + h) - 2 * fn(x) + fn(np.maximum(x - h, 0.0))) / h**2
    forward = (fn(x) - 2 * fn(x + h) + fn(x + 2 * h)) / h**2
    return np.where(x - h >= 0, central, forward)


def validate_assumptions(
    model: OffspringModel,
    x_grid=None,
    t_max: int = 50,
    tol: float = 1e-12,
) -> AssumptionReport:
    """Check the ordering, Lipschitz and smoothness conditions on a grid.

    Violations are reported, never raised.  The default grid is
    ``0, 0.05, ..., 3``.
    """
    if x_grid is None:
        x_grid = np.linspace(0.0, 3.0, 61)
    grid = np.asarray(x_grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise DomainError("x_grid must be sorted ascending")

    t = np.arange(t_max + 1)
    cdfs = model.cdf(grid[:, None], t[None, :])
    # worst F_x(t) - F_y(t) over x <= y is the running max minus the current row
    running = np.maximum.accumulate(cdfs, axis=0)
    violation = float(np.max(running - cdfs))

    m2 = np.asarray(model.second_moment(grid), dtype=float)
    dx = np.diff(grid)
    keep = dx > 0
    lipschitz = float(np.max(np.abs(np.diff(m2)[keep] / dx[keep]), initial=0.0))

    fp = _derivative(model.f, grid, FD_STEP)
    fpp = _second_derivative(model.f, grid, FD_STEP_SECOND)
    fp0 = float(_derivative(model.f, np.array([0.0]), FD_STEP)[0])
    fp_sup = float(np.max(np.abs(fp)))
    a3_ok = abs(fp0 - model.rho) <= FD_TOL * model.rho and fp_sup <= fp0 + FD_TOL * model.rho

    return AssumptionReport(
        grid=grid,
        t_max=int(t_max),
        tol=tol,
        a1_ok=violation <= tol,
        a1_worst_violation=violation,
        a2_lipschitz_estimate=lipschitz,
        a3_ok=bool(a3_ok),
        f_prime_sup=fp_sup,
        f_prime_at_zero=fp0,
        f_second_sup=float(np.max(np.abs(fpp))),
    )
