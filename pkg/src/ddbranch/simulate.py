"""Trajectories of the density-dependent process and its Galton-Watson bound.

The coupled construction draws one uniform ``U`` per individual of the
dominating process ``Y``.  Individual ``j`` leaves ``quantile(0, U)``
offspring in ``Y`` and, if ``j <= Z_{n-1}``, ``quantile(Z_{n-1}/K, U)``
offspring in ``Z``.  Quantiles are nonincreasing in density, so
``Z_n <= Y_n`` holds on every path.

Work per coupled path is proportional to the total ``Y`` population; the
per-individual loop runs in :mod:`ddbranch.kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .conjugacy import iterate_map
from .errors import DomainError, PopulationOverflow
from .offspring import OffspringModel

POPULATION_CAP = 10**8
CHUNK = 1 << 16


def make_rng(seed: int, key: Sequence[int] = ()) -> np.random.Generator:
    """Independent reproducible stream for ``(seed, *key)``.

    Streams for different keys come from ``SeedSequence`` spawn keys, so
    replicate ``r`` of a run is the same whether it executes first, last
    or in another process.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Horizon:
    """Integer and fractional parts of ``log_rho K``."""

    n1: int
    frac: float


def _log_floor(value: float, rho: float, scale: float = 1.0):
    # floor(scale * log_rho(value)) robust to rounding at exact powers
    exact = scale * math.log(value) / math.log(rho)
    n = math.floor(exact)
    if scale == 1.0:
        while rho ** (n + 1) <= value:
            n += 1
        while n > 0 and rho**n > value:
            n -= 1
    elif abs(exact - round(exact)) < 1e-9:
        n = round(exact)
    return n, exact


def horizon(K: int, rho: float) -> Horizon:
    """``n1 = [log_rho K]`` and ``frac = {log_rho K}``."""
    if K < 2:
        raise DomainError("carrying capacity must be at least 2")
    if not rho > 1:
        raise DomainError("rho must exceed 1")
    n1, exact = _log_floor(float(K), rho)
    frac = 0.0 if rho**n1 == K else min(max(exact - n1, 0.0), math.nextafter(1.0, 0.0))
    return Horizon(n1=n1, frac=frac)


@dataclass(frozen=True, eq=False)
class CoupledPath:
    """Paired trajectories ``Z_0..Z_n`` and ``Y_0..Y_n`` on common uniforms."""

    capacity: int
    z: np.ndarray
    y: np.ndarray
    seed: int
    key: tuple = ()

    @property
    def n_steps(self) -> int:
        return len(self.z) - 1

    @property
    def extinct_z_at(self) -> Optional[int]:
        """First step with ``Z = 0`` within the horizon, else ``None``."""
        hits = np.flatnonzero(self.z == 0)
        return int(hits[0]) if hits.size else None

    @property
    def z_density(self) -> np.ndarray:
        return self.z / self.capacity

    @property
    def y_density(self) -> np.ndarray:
        return self.y / self.capacity


def _coupled_step(model, kernel, rng, buf, x, z_prev, y_prev):
    cdf_y = model.cdf_table_at_zero
    cdf_z = model.cdf_table(x)
    z_sum = y_sum = 0
    done = 0
    while done < y_prev:
        m = min(y_prev - done, CHUNK)
        u = buf[:m]
        rng.random(out=u)
        zs, ys = kernel(cdf_y, cdf_z, u, min(max(z_prev - done, 0), m))
        z_sum += zs
        y_sum += ys
        done += m
    return z_sum, y_sum


def simulate_coupled(
    model: OffspringModel,
    K: int,
    n_steps: int,
    seed: int,
    *,
    key: Sequence[int] = (),
    z0: int = 1,
    population_cap: int = POPULATION_CAP,
    backend: Optional[str] = None,
) -> CoupledPath:
    """Simulate ``(Z, Y)`` for ``n_steps`` generations from ``Z_0 = Y_0 = z0``.

    ``(model, K, n_steps, seed, key, z0)`` determines the path bit for bit.
    Raises :class:`PopulationOverflow` once ``Y`` exceeds ``population_cap``.
    """
    if n_steps < 1:
        raise DomainError("n_steps must be at least 1")
    if K < 1:
        raise DomainError("carrying capacity must be at least 1")
    if z0 < 1:
        raise DomainError("initial colony must have at least one individual")
    kernel = kernels.get_kernel(backend)
    rng = make_rng(seed, key)
    buf = np.empty(CHUNK)
    z = np.zeros(n_steps + 1, dtype=np.int64)
    y = np.zeros(n_steps + 1, dtype=np.int64)
    z[0] = y[0] = z0
    for n in range(1, n_steps + 1):
        z_prev, y_prev = int(z[n - 1]), int(y[n - 1])
        if y_prev == 0:
            break
        zn, yn = _coupled_step(model, kernel, rng, buf, z_prev / K, z_prev, y_prev)
        if yn > population_cap:
            raise PopulationOverflow(
                f"Y reached {yn} > cap {population_cap} at step {n}; use a shorter horizon"
            )
        z[n], y[n] = zn, yn
    return CoupledPath(capacity=int(K), z=z, y=y, seed=int(seed), key=tuple(key))


def estimate_w(path: CoupledPath, rho: float, n: int) -> float:
    """Horizon-``n`` proxy ``rho^-n Y_n`` for the martingale limit ``W``."""
    if not 0 <= n <= path.n_steps:
        raise DomainError(f"step {n} outside the simulated horizon 0..{path.n_steps}")
    return float(path.y[n]) / rho**n


def extend_gw(
    model: OffspringModel,
    y: int,
    generations: int,
    rng: np.random.Generator,
    population_cap: Optional[int] = POPULATION_CAP,
) -> int:
    """Advance a Galton-Watson population ``generations`` steps by aggregated draws.

    Only valid for ``Y`` on its own: the coupling to ``Z`` is not kept.
    Aggregated draws cost O(1) per generation, so ``population_cap=None``
    is safe here.
    """
    for _ in range(generations):
        if y == 0:
            break
        y = model.sample_sum_at_zero(rng, y)
        if population_cap is not None and y > population_cap:
            raise PopulationOverflow(f"Y reached {y} > cap {population_cap}")
    return y


def simulate_density(
    model: OffspringModel,
    K: int,
    z0: int,
    n_steps: int,
    seed: int,
    *,
    key: Sequence[int] = (),
) -> np.ndarray:
    """Uncoupled fast path for ``Z`` alone; returns ``Z_0..Z_n``.

    Each generation's total is drawn in aggregate (negative binomial or
    thinned multinomial).  Not for coupling experiments.
    """
    rng = make_rng(seed, key)
    z = np.zeros(n_steps + 1, dtype=np.int64)
    z[0] = z0
    for n in range(1, n_steps + 1):
        prev = int(z[n - 1])
        if prev == 0:
            break
        z[n] = model.sample_sum(rng, prev / K, prev)
    return z


def deterministic_path(model: OffspringModel, x0: float, n: int) -> np.ndarray:
    """Large-colony limit ``x_k = f(x_{k-1})``; see :func:`iterate_map`."""
    return iterate_map(model, x0, n)


def gaussian_fluctuation_path(
    model: OffspringModel, x0: float, n: int, seed: int, *, key: Sequence[int] = ()
) -> np.ndarray:
    """One draw of the Gaussian fluctuation process ``V_0..V_n`` around ``x_k``.

    ``V_k = f'(x_{k-1}) V_{k-1} + sqrt(x_{k-1} sigma^2(x_{k-1})) W_k`` with
    ``V_0 = 0`` and i.i.d. standard normal ``W_k``.
    """
    if not x0 > 0:
        raise DomainError("the fluctuation limit needs a positive initial density")
    rng = make_rng(seed, key)
    xs = iterate_map(model, x0, n)
    noise = rng.standard_normal(n)
    v = np.zeros(n + 1)
    for k in range(1, n + 1):
        x = xs[k - 1]
        v[k] = model.f_prime(x) * v[k - 1] + math.sqrt(x * model.variance(x)) * noise[k - 1]
    return v


def fluctuation_variance(model: OffspringModel, x0: float, n: int) -> np.ndarray:
    """Exact ``Var V_k`` from ``v_k = f'(x_{k-1})^2 v_{k-1} + x_{k-1} sigma^2(x_{k-1})``."""
    xs = iterate_map(model, x0, n)
    v = np.zeros(n + 1)
    for k in range(1, n + 1):
        x = xs[k - 1]
        v[k] = model.f_prime(x) ** 2 * v[k - 1] + x * model.variance(x)
    return v
