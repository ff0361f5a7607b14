"""The limit ``H(x) = lim f^n(x / rho^n)`` and its derivatives.

``H`` semiconjugates the reproduction map to its linearization at the
origin, ``H(rho x) = f(H(x))``.  Values come from direct functional
iteration with an a posteriori Cauchy stopping rule; derivatives from the
infinite product ``H'(x) = prod_j f'(H(x rho^-j)) / rho`` and the series
obtained by differentiating it term by term.

:func:`build_table` tabulates all three on a grid once so the Monte Carlo
harness can evaluate ``H`` cheaply; the table certifies its own
consistency when it is built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .errors import CertificationError, ConvergenceError, DomainError
from .offspring import OffspringModel

MAX_DEPTH = 200
RESIDUAL_FACTOR = 10.0
RATIO_BAND = 0.05


def iterate_map(model: OffspringModel, x0: float, n: int) -> np.ndarray:
    """Deterministic density path ``x_0, f(x_0), ..., f^n(x_0)``."""
    if n < 0:
        raise DomainError("number of iterations must be non-negative")
    if not (x0 >= 0):
        raise DomainError("initial density must be non-negative")
    path = np.empty(n + 1)
    path[0] = x = float(x0)
    for k in range(1, n + 1):
        x = model.f(x)
        path[k] = x
    return path


def h_n(model: OffspringModel, x, n: int):
    """Finite-depth approximant ``H_n(x) = f^n(x / rho^n)``."""
    y = np.asarray(x, dtype=float) / model.rho**n
    for _ in range(n):
        y = model.f(y)
    return y


def _h_eval(model, x, tol, max_depth=MAX_DEPTH):
    x = np.asarray(x, dtype=float)
    if np.any(~(x >= 0)):
        raise DomainError("H is defined on the non-negative half line")
    if not tol > 0:
        raise DomainError("tolerance must be positive")
    flat = x.ravel()
    if model.is_linear:
        return flat.copy().reshape(x.shape), np.zeros(x.shape, dtype=int)

    # increments shrink geometrically at rate 1/rho, so the tail after a
    # step of size d is at most d/(rho - 1): stop once that is below tol.
    # Two consecutive small steps are required because x / rho^n can land
    # on a fixed point of f and make a single increment vanish spuriously.
    threshold = tol * (1.0 - 1.0 / model.rho)
    out = np.empty_like(flat)
    depth = np.zeros(flat.shape, dtype=int)
    active = np.arange(flat.size)
    prev = flat.copy()
    small_before = np.zeros(flat.shape, dtype=bool)
    d = np.zeros(0)
    for n in range(1, max_depth + 1):
        cur = h_n(model, flat[active], n)
        d = np.abs(cur - prev)
        small = d <= threshold
        done = small & small_before
        out[active[done]] = cur[done]
        depth[active[done]] = n
        active = active[~done]
        prev = cur[~done]
        small_before = small[~done]
        d = d[~done]
        if active.size == 0:
            break
    else:
        worst = float(np.max(d))
        raise ConvergenceError(
            f"H_n did not converge within {max_depth} iterations (last increment {worst:.3e})",
            last_increment=worst,
        )
    return out.reshape(x.shape), depth.reshape(x.shape)


def h_eval(model: OffspringModel, x, tol: float = 1e-10, max_depth: int = MAX_DEPTH):
    """``H(x)`` to absolute accuracy ``tol``; scalar or array input.

    Raises :class:`ConvergenceError` carrying the last increment when the
    Cauchy criterion is not met within ``max_depth`` iterations.
    """
    values, _ = _h_eval(model, x, tol, max_depth)
    return values.item() if values.ndim == 0 else values


def _product_depth(model, x, tol):
    # log|f'(H(y))/rho| <= C y once y < r, so the neglected tail of the
    # product or series beyond depth J is at most C x rho^-J / (rho - 1)
    rho = model.rho
    c2 = model.f_second_sup
    big_c = 2.0 * c2 / rho
    r = rho / (2.0 * c2)
    xs = np.maximum(x, 1.0)
    with np.errstate(divide="ignore"):
        j_near = np.floor(np.log(np.maximum(x, 1e-300) / r) / math.log(rho))
        j_tail = np.floor(np.log(big_c * xs / ((rho - 1.0) * tol)) / math.log(rho)) + 1
    depth = np.maximum(np.maximum(j_near + 1, j_tail), 1)
    return depth.astype(int)


def _factors(model, x, depth, tol):
    # a[i, j-1] = f'(H(x_i rho^-j)) / rho for j <= depth[i]; 1 beyond
    rho = model.rho
    width = int(depth.max())
    j = np.arange(1, width + 1)
    pts = x[:, None] / rho ** j[None, :]
    valid = j[None, :] <= depth[:, None]
    inner_tol = tol / max(1.0, width * model.f_second_sup / rho)
    h = np.zeros_like(pts)
    h[valid] = h_eval(model, pts[valid], inner_tol)
    a = np.ones_like(pts)
    a[valid] = model.f_prime(h[valid]) / rho
    return a, h, valid


def h_prime(model: OffspringModel, x, tol: float = 1e-10):
    """``H'(x)`` as a truncated infinite product of ``f'(H(x rho^-j)) / rho``."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(~(x_arr >= 0)):
        raise DomainError("H is defined on the non-negative half line")
    if model.is_linear:
        out = np.ones_like(x_arr)
    else:
        depth = _product_depth(model, x_arr, tol)
        a, _, _ = _factors(model, x_arr, depth, tol)
        out = np.prod(a, axis=1)
        out[x_arr == 0] = 1.0
    return out.item() if np.ndim(x) == 0 else out.reshape(np.shape(x))


def h_second(model: OffspringModel, x, tol: float = 1e-10):
    """``H''(x)`` by differentiating the product for ``H'`` term by term.

    Each term is written with the leave-one-out product of the factors
    instead of ``H'(x) f''/f'``; the two agree wherever ``f' != 0`` and
    the product form needs no ``0/0`` convention.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(~(x_arr >= 0)):
        raise DomainError("H is defined on the non-negative half line")
    if model.is_linear:
        out = np.zeros_like(x_arr)
    else:
        rho = model.rho
        depth = _product_depth(model, x_arr, tol)
        a, h, valid = _factors(model, x_arr, depth, tol)
        ones = np.ones((len(x_arr), 1))
        prefix = np.cumprod(np.hstack([ones, a]), axis=1)[:, :-1]  # prod_{k<i}
        suffix = np.cumprod(np.hstack([a, ones])[:, ::-1], axis=1)[:, ::-1][:, 1:]  # prod_{k>i}
        f2 = np.zeros_like(a)
        f2[valid] = model.f_second(h[valid]) / rho
        i = np.arange(1, a.shape[1] + 1)
        # H'(x rho^-i) is the product of the factors beyond i
        terms = prefix * suffix * f2 * suffix * rho ** (-i[None, :].astype(float))
        out = terms.sum(axis=1)
    return out.item() if np.ndim(x) == 0 else out.reshape(np.shape(x))


def semiconjugacy_residual(model: OffspringModel, x, tol: float = 1e-10):
    """``|H(x) - f(H(x / rho))|``; zero up to the evaluation tolerance."""
    hx = h_eval(model, x, tol)
    inner = h_eval(model, np.asarray(x, dtype=float) / model.rho, tol)
    return np.abs(hx - model.f(inner))


def increment_ratios(model: OffspringModel, x: float, n_max: int = 60) -> np.ndarray:
    """Successive ratios ``d_{n+1} / d_n`` of ``d_n = |H_{n+1}(x) - H_n(x)|``."""
    hs = np.array([h_n(model, x, n) for n in range(n_max + 2)])
    d = np.abs(np.diff(hs))
    with np.errstate(divide="ignore", invalid="ignore"):
        return d[1:] / d[:-1]


def _settled_ratio(model, x):
    # last ratio whose increments sit well above round-off
    hs = np.array([h_n(model, x, n) for n in range(MAX_DEPTH)])
    d = np.abs(np.diff(hs))
    ok = np.flatnonzero(d > 1e-9 * max(1.0, abs(hs[-1])))
    if len(ok) < 2:
        return 1.0 / model.rho
    k = ok[-1]
    return float(d[k] / d[k - 1])


def _monotone_slopes(x, y, slopes, n_intervals):
    # Fritsch-Carlson limiting on the first n_intervals intervals
    d = slopes.copy()
    secant = np.diff(y) / np.diff(x)
    for k in range(n_intervals):
        if secant[k] == 0:
            d[k] = d[k + 1] = 0.0
            continue
        a, b = d[k] / secant[k], d[k + 1] / secant[k]
        if a < 0:
            d[k], a = 0.0, 0.0
        if b < 0:
            d[k + 1], b = 0.0, 0.0
        s = a * a + b * b
        if s > 9.0:
            tau = 3.0 / math.sqrt(s)
            d[k] = tau * a * secant[k]
            d[k + 1] = tau * b * secant[k]
    return d


@dataclass(frozen=True, eq=False)
class ConjugacyEvaluator:
    """Tabulated ``H``, ``H'``, ``H''`` with interpolation between nodes.

    ``H`` is interpolated by cubic Hermite segments through the exact
    slopes, limited to stay monotone on ``[0, invertible_upper]``; beyond
    ``grid[-1]`` the evaluator falls back to direct iteration.
    """

    model: OffspringModel
    grid: np.ndarray
    h_values: np.ndarray
    h_prime_values: np.ndarray
    h_second_values: np.ndarray
    tol: float
    n_depth: int
    invertible_upper: float
    max_residual: float
    convergence_ratios: tuple

    def __post_init__(self):
        n_mono = int(np.searchsorted(self.grid, self.invertible_upper, side="right")) - 1
        slopes = _monotone_slopes(self.grid, self.h_values, self.h_prime_values, n_mono)
        object.__setattr__(self, "_h", CubicHermiteSpline(self.grid, self.h_values, slopes))
        object.__setattr__(
            self, "_hp", CubicHermiteSpline(self.grid, self.h_prime_values, self.h_second_values)
        )
        object.__setattr__(self, "_hpp", PchipInterpolator(self.grid, self.h_second_values))

    @property
    def x_max(self) -> float:
        return float(self.grid[-1])

    def _dispatch(self, x, table, direct):
        x = np.asarray(x, dtype=float)
        if np.any(~(x >= 0)):
            raise DomainError("H is defined on the non-negative half line")
        inside = x <= self.x_max
        if np.all(inside):
            out = table(x)
        else:
            out = np.empty_like(x)
            out[inside] = table(x[inside])
            out[~inside] = direct(self.model, x[~inside], self.tol)
        return out.item() if out.ndim == 0 else out

    def H(self, x):
        if self.model.is_linear:
            return self._dispatch(x, np.array, lambda m, v, t: v)
        return self._dispatch(x, self._h, h_eval)

    __call__ = H

    def H_prime(self, x):
        return self._dispatch(x, self._hp, h_prime)

    def H_second(self, x):
        return self._dispatch(x, self._hpp, h_second)

    def inverse(self, y):
        return h_inverse(self, y)


def build_table(
    model: OffspringModel,
    x_max: float = 4.0,
    step: float = 0.01,
    tol: float = 1e-10,
) -> ConjugacyEvaluator:
    """Tabulate ``H``, ``H'``, ``H''`` on ``[0, x_max]`` and certify the table.

    Raises :class:`CertificationError` if ``H(0) != 0``, ``H'(0) != 1``,
    ``H`` is not 1-Lipschitz on the grid, the semiconjugacy residual
    exceeds ``10 tol`` anywhere, or the iteration increments do not decay
    at rate ``1/rho`` at the probe points.
    """
    if not (x_max > 0 and step > 0):
        raise DomainError("x_max and step must be positive")
    n = int(round(x_max / step))
    grid = np.linspace(0.0, n * step, n + 1)
    h, depth = _h_eval(model, grid, tol)
    hp = np.asarray(h_prime(model, grid, tol))
    hpp = np.asarray(h_second(model, grid, tol))

    if h[0] != 0.0 or hp[0] != 1.0:
        raise CertificationError(f"H(0)={h[0]!r}, H'(0)={hp[0]!r}; expected 0 and 1")
    excess = np.abs(np.diff(h)) - (np.diff(grid) + 2 * tol)
    if np.any(excess > 0):
        i = int(np.argmax(excess))
        raise CertificationError(f"H is not 1-Lipschitz between x={grid[i]} and x={grid[i + 1]}")
    residual = np.abs(h - model.f(h_eval(model, grid / model.rho, tol)))
    max_residual = float(residual.max())
    if max_residual > RESIDUAL_FACTOR * tol:
        i = int(np.argmax(residual))
        raise CertificationError(
            f"semiconjugacy residual {max_residual:.3e} at x={grid[i]} exceeds {RESIDUAL_FACTOR}*tol"
        )
    ratios = ()
    if not model.is_linear:
        ratios = tuple(_settled_ratio(model, p) for p in (x_max / 4, x_max / 2, x_max))
        bad = [r for r in ratios if abs(r - 1 / model.rho) > RATIO_BAND]
        if bad:
            raise CertificationError(f"increment ratios {ratios} are not within {RATIO_BAND} of 1/rho")

    rises = np.diff(h) >= step / 4
    n_up = len(rises) if rises.all() else int(np.argmin(rises))
    return ConjugacyEvaluator(
        model=model,
        grid=grid,
        h_values=h,
        h_prime_values=hp,
        h_second_values=hpp,
        tol=tol,
        n_depth=int(depth.max()),
        invertible_upper=float(grid[n_up]),
        max_residual=max_residual,
        convergence_ratios=ratios,
    )


def h_inverse(evaluator: ConjugacyEvaluator, y, xtol: float = 1e-12):
    """Local inverse of ``H`` on the certified interval, by bisection."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    upper = evaluator.invertible_upper
    top = evaluator.H(upper)
    if np.any(~((y_arr >= 0) & (y_arr <= top))):
        raise DomainError(f"H^-1 is certified only on [0, {top!r}]")
    if evaluator.model.is_linear:
        out = y_arr.copy()
    else:
        lo = np.zeros_like(y_arr)
        hi = np.full_like(y_arr, upper)
        while np.max(hi - lo) > xtol:
            mid = 0.5 * (lo + hi)
            below = evaluator.H(mid) < y_arr
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        out[y_arr == 0] = 0.0
    return out.item() if np.ndim(y) == 0 else out.reshape(np.shape(y))
