"""Monte Carlo harness for the emergence-time approximation rate.

One replicate simulates a coupled path to ``n1 = [log_rho K]`` and records

* ``error_new = Z_{n1}/K - H(W_hat rho^-frac)`` with ``W_hat = rho^-n1 Y_{n1}``
  standing in for the unobservable martingale limit, and
* ``error_legacy = Z_{n1}/K - f^{n1 - n_c}(Y_{n_c}/K)``, the two-phase
  approximation that follows the linear process up to ``n_c = [c log_rho K]``.

Since ``rho^{n1 + frac} = K`` the argument of ``H`` is exactly ``Y_{n1}/K``.
Rates are read off quantiles of the absolute errors across a grid of ``K``
by least squares on the log-log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .conjugacy import ConjugacyEvaluator, iterate_map
from .csvio import write_csv
from .errors import ConvergenceError, DomainError
from .offspring import OffspringModel
from .simulate import extend_gw, horizon, make_rng, simulate_coupled, simulate_density

DEFAULT_C = 5 / 8
DEFAULT_LEVELS = (0.5, 0.9)
MIN_SLOPE_POINTS = 4
MIN_CELL = 100
EXTINCTION_TOL = 1e-12
EXTINCTION_MAX_ITER = 10**7

RAW_HEADER = (
    "K", "replicate", "n1", "frac", "w_hat", "z_n1", "y_n1",
    "error_new", "error_legacy", "extinct",
)
REPORT_HEADER = (
    "K", "level", "n_all", "n_surviving",
    "new_all", "legacy_all", "new_surviving", "legacy_surviving", "flag",
)
HISTOGRAM_HEADER = ("K", "bin_left", "bin_right", "count")


@dataclass(frozen=True)
class ErrorSample:
    """Approximation errors of one replicate at the horizon ``n1(K)``.

    ``extinct`` records ``Z_{n1} = 0``; ``y_n1 = 0`` means the dominating
    Galton-Watson process died as well, in which case both errors are 0.
    """

    K: int
    replicate: int
    n1: int
    frac: float
    w_hat: float
    z_n1: int
    y_n1: int
    error_new: float
    error_legacy: float
    extinct: bool

    @property
    def y_survived(self) -> bool:
        return self.y_n1 > 0

    def row(self) -> tuple:
        return (
            self.K, self.replicate, self.n1, self.frac, self.w_hat, self.z_n1,
            self.y_n1, self.error_new, self.error_legacy, self.extinct,
        )


def cutoff(K: int, rho: float, c: float) -> int:
    """``n_c = [log_rho K^c]``, guarded against rounding at exact powers."""
    if not 0.5 < c < 1:
        raise DomainError(f"cutoff exponent c={c} must lie in the open interval (1/2, 1)")
    return math.floor(c * math.log(K) / math.log(rho) + 1e-9)


def legacy_approximation(
    model: OffspringModel, K: int, c: float, y_path: Sequence[int]
) -> float:
    """``f^{n1 - n_c}(Y_{n_c} / K)``: linear growth up to ``n_c``, then the map."""
    n1 = horizon(K, model.rho).n1
    n_c = min(cutoff(K, model.rho, c), n1)
    if len(y_path) <= n1:
        raise DomainError(f"Y path has {len(y_path)} entries; need the horizon n1={n1}")
    return float(iterate_map(model, y_path[n_c] / K, n1 - n_c)[-1])


def error_sample(
    model: OffspringModel,
    evaluator: ConjugacyEvaluator,
    K: int,
    seed: int,
    *,
    replicate: int = 0,
    c: float = DEFAULT_C,
    extra_generations: int = 0,
    backend: Optional[str] = None,
) -> ErrorSample:
    """Simulate one coupled path to ``n1(K)`` and measure both errors.

    The path stream is keyed by ``(seed, K, replicate)``.  With
    ``extra_generations > 0`` the estimate of ``W`` uses ``Y`` advanced that
    many more generations (aggregated draws, separate stream).
    """
    if evaluator.model != model:
        raise DomainError("evaluator was built for a different model")
    h = horizon(K, model.rho)
    path = simulate_coupled(model, K, max(h.n1, 1), seed, key=(K, replicate), backend=backend)
    z, y = int(path.z[h.n1]), int(path.y[h.n1])
    if extra_generations > 0 and y > 0:
        rng = make_rng(seed, (K, replicate, 1))
        y_ext = extend_gw(model, y, extra_generations, rng, population_cap=None)
        arg = y_ext / (K * model.rho**extra_generations)
        w_hat = y_ext / model.rho ** (h.n1 + extra_generations)
    else:
        arg = y / K
        w_hat = y / model.rho**h.n1
    z_bar = z / K
    return ErrorSample(
        K=int(K),
        replicate=int(replicate),
        n1=h.n1,
        frac=h.frac,
        w_hat=float(w_hat),
        z_n1=z,
        y_n1=y,
        error_new=float(z_bar - evaluator(arg)),
        error_legacy=float(z_bar - legacy_approximation(model, K, c, path.y)),
        extinct=z == 0,
    )


def _run_block(model, evaluator, K, seed, replicates, c, extra_generations, backend):
    return [
        error_sample(model, evaluator, K, seed, replicate=r, c=c,
                     extra_generations=extra_generations, backend=backend)
        for r in replicates
    ]


def run_samples(
    model: OffspringModel,
    evaluator: ConjugacyEvaluator,
    k_grid: Sequence[int],
    replicates: int,
    master_seed: int,
    *,
    c: float = DEFAULT_C,
    extra_generations: int = 0,
    n_jobs: int = 1,
    block: int = 50,
    backend: Optional[str] = None,
) -> list[ErrorSample]:
    """All ``(K, replicate)`` samples, sorted by key whatever the scheduling."""
    cutoff(max(k_grid), model.rho, c)  # validates c
    tasks = [
        (K, range(start, min(start + block, replicates)))
        for K in k_grid
        for start in range(0, replicates, block)
    ]
    blocks = Parallel(n_jobs=n_jobs)(
        delayed(_run_block)(model, evaluator, K, master_seed, reps, c, extra_generations, backend)
        for K, reps in tasks
    )
    samples = [s for b in blocks for s in b]
    samples.sort(key=lambda s: (s.K, s.replicate))
    return samples


@dataclass(frozen=True)
class QuantileRow:
    K: int
    level: float
    n_all: int
    n_surviving: int
    new_all: float
    legacy_all: float
    new_surviving: float
    legacy_surviving: float
    undersampled: bool

    def row(self) -> tuple:
        return (
            self.K, self.level, self.n_all, self.n_surviving, self.new_all,
            self.legacy_all, self.new_surviving, self.legacy_surviving,
            "undersampled" if self.undersampled else "ok",
        )


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares fit of ``log quantile`` on ``log K`` for one arm."""

    arm: str
    conditioning: str
    level: float
    slope: float
    stderr: float
    intercept: float
    n_points: int
    status: str

    @property
    def defined(self) -> bool:
        return self.status == "ok"

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return (self.slope - z * self.stderr, self.slope + z * self.stderr)

    def comment(self) -> str:
        return (
            f"slope arm={self.arm} conditioning={self.conditioning} level={self.level!r} "
            f"slope={self.slope!r} stderr={self.stderr!r} intercept={self.intercept!r} "
            f"n_points={self.n_points} status={self.status}"
        )


def _cell_minimum(level: float) -> int:
    return max(MIN_CELL, math.ceil(10 / (1 - level)))


def fit_slope(k_values, quantiles, arm, conditioning, level) -> SlopeFit:
    """Fit on the positive, finite cells; flags why a slope is undefined."""
    k = np.asarray(k_values, dtype=float)
    q = np.asarray(quantiles, dtype=float)
    ok = np.isfinite(q) & (q > 0)
    nan = math.nan
    if len(k) < MIN_SLOPE_POINTS:
        return SlopeFit(arm, conditioning, level, nan, nan, nan, len(k), "too_few_k")
    if ok.sum() < len(k):
        status = "zero_quantiles" if not ok.any() else "nonpositive_quantiles"
        return SlopeFit(arm, conditioning, level, nan, nan, nan, int(ok.sum()), status)
    res = stats.linregress(np.log(k), np.log(q))
    return SlopeFit(arm, conditioning, level, float(res.slope), float(res.stderr),
                    float(res.intercept), len(k), "ok")


@dataclass(frozen=True)
class RateReport:
    """Per-``K`` quantiles of ``|error|`` and fitted log-log slopes.

    ``*_all`` columns use every replicate; ``*_surviving`` ones only those
    where ``Y_{n1} > 0``.  Extinct replicates have both errors exactly 0, so
    when extinction is common the unconditional median sits on that atom.
    """

    k_grid: tuple
    quantile_levels: tuple
    rows: tuple
    slopes: tuple
    samples: tuple = field(repr=False, default=())

    def quantiles(self, level: float, column: str) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.rows if r.level == level])

    def slope(self, arm: str, conditioning: str = "surviving", level: float = 0.5) -> SlopeFit:
        for s in self.slopes:
            if (s.arm, s.conditioning, s.level) == (arm, conditioning, level):
                return s
        raise KeyError((arm, conditioning, level))

    def scale_ratio(self, conditioning: str = "surviving", level: float = 0.5) -> float:
        """Spread ``max/min`` of ``q(K) sqrt(K) / log K`` for the new arm."""
        k = np.asarray(self.k_grid, dtype=float)
        v = self.quantiles(level, f"new_{conditioning}") * np.sqrt(k) / np.log(k)
        return float(v.max() / v.min()) if np.all(v > 0) else math.inf

    def comments(self) -> list[str]:
        return [s.comment() for s in self.slopes]

    def csv_rows(self) -> list[tuple]:
        return [r.row() for r in self.rows]


def summarize(
    samples: Sequence[ErrorSample],
    k_grid: Sequence[int],
    quantile_levels: Sequence[float] = DEFAULT_LEVELS,
) -> RateReport:
    """Aggregate samples into a :class:`RateReport`."""
    rows = []
    for K in k_grid:
        sel = [s for s in samples if s.K == K]
        new = np.abs([s.error_new for s in sel])
        leg = np.abs([s.error_legacy for s in sel])
        alive = np.array([s.y_survived for s in sel], dtype=bool)
        for level in quantile_levels:
            def q(a):
                return float(np.quantile(a, level)) if a.size else math.nan
            rows.append(QuantileRow(
                K=int(K), level=float(level), n_all=len(sel), n_surviving=int(alive.sum()),
                new_all=q(new), legacy_all=q(leg),
                new_surviving=q(new[alive]), legacy_surviving=q(leg[alive]),
                undersampled=int(alive.sum()) < _cell_minimum(level),
            ))
    rows = tuple(rows)
    slopes = []
    for level in quantile_levels:
        for conditioning in ("surviving", "all"):
            for arm in ("new", "legacy"):
                col = [getattr(r, f"{arm}_{conditioning}") for r in rows if r.level == level]
                slopes.append(fit_slope(k_grid, col, arm, conditioning, float(level)))
    return RateReport(tuple(int(k) for k in k_grid), tuple(float(l) for l in quantile_levels),
                      rows, tuple(slopes), tuple(samples))


def rate_experiment(
    model: OffspringModel,
    evaluator: ConjugacyEvaluator,
    k_grid: Sequence[int],
    replicates: int,
    master_seed: int,
    quantile_levels: Sequence[float] = DEFAULT_LEVELS,
    *,
    c: float = DEFAULT_C,
    extra_generations: int = 0,
    n_jobs: int = 1,
    backend: Optional[str] = None,
) -> RateReport:
    """Run ``replicates`` error samples per ``K`` and fit the rate slopes."""
    k_grid = [int(k) for k in k_grid]
    if any(b <= a for a, b in zip(k_grid, k_grid[1:])):
        raise DomainError("k_grid must be strictly ascending")
    if replicates < 1:
        raise DomainError("need at least one replicate")
    for level in quantile_levels:
        if not 0 < level < 1:
            raise DomainError(f"quantile level {level} outside (0, 1)")
    samples = run_samples(model, evaluator, k_grid, replicates, master_seed, c=c,
                          extra_generations=extra_generations, n_jobs=n_jobs, backend=backend)
    return summarize(samples, k_grid, quantile_levels)


def gw_extinction_prob(model: OffspringModel, tol: float = EXTINCTION_TOL) -> float:
    """Smallest fixed point of the density-zero PGF, iterating ``s <- phi(s)`` from 0."""
    if not model.rho > 1:
        raise DomainError("the extinction probability iteration needs rho > 1")
    s = 0.0
    for _ in range(EXTINCTION_MAX_ITER):
        nxt = float(model.pgf_at_zero(s))
        if abs(nxt - s) < tol:
            return nxt
        s = nxt
    raise ConvergenceError("extinction probability iteration did not settle", abs(nxt - s))


def compare_extinction(
    model: OffspringModel, K: int, replicates: int, seed: int
) -> tuple[float, float]:
    """``(fraction of Z paths extinct by n1, Galton-Watson extinction probability)``.

    Uses the aggregated ``Z``-only sampler, which has the same law as the
    coupled one.
    """
    n1 = max(horizon(K, model.rho).n1, 1)
    extinct = sum(
        simulate_density(model, K, 1, n1, seed, key=(K, r))[-1] == 0 for r in range(replicates)
    )
    return extinct / replicates, gw_extinction_prob(model)


def normalized_errors(samples: Sequence[ErrorSample]) -> np.ndarray:
    """``error_new sqrt(K) / log K`` for every sample."""
    return np.array([s.error_new * math.sqrt(s.K) / math.log(s.K) for s in samples])


def histogram_rows(samples: Sequence[ErrorSample], k_grid: Sequence[int], bins: int = 40):
    """Counts of the normalized error on shared bins, per ``K``, surviving paths only."""
    alive = [s for s in samples if s.y_survived]
    values = normalized_errors(alive)
    if values.size == 0:
        return []
    edges = np.histogram_bin_edges(values, bins=bins)
    rows = []
    for K in k_grid:
        counts, _ = np.histogram(values[[s.K == K for s in alive]], bins=edges)
        rows.extend(
            (int(K), float(lo), float(hi), int(n)) for lo, hi, n in zip(edges[:-1], edges[1:], counts)
        )
    return rows


def write_outputs(report: RateReport, out_dir, prefix: str = "") -> dict[str, Path]:
    """Write ``errors.csv``, ``rate_report.csv`` and ``error_histogram.csv``."""
    out_dir = Path(out_dir)
    return {
        "errors": write_csv(out_dir / f"{prefix}errors.csv", RAW_HEADER,
                            (s.row() for s in report.samples)),
        "rate_report": write_csv(out_dir / f"{prefix}rate_report.csv", REPORT_HEADER,
                                 report.csv_rows(), comments=report.comments()),
        "histogram": write_csv(out_dir / f"{prefix}error_histogram.csv", HISTOGRAM_HEADER,
                               histogram_rows(report.samples, report.k_grid)),
    }
