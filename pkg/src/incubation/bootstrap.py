"""Smoothed-bootstrap bandwidth selection, the continuous simulation model,
subsample bandwidth calibration and pointwise bootstrap confidence bands.

Every replicate ``r`` draws from its own generator seeded by
``SeedSequence(seed, spawn_key=(r,))``, and per-replicate results are stored
by replicate index before being averaged, so curves do not depend on how the
replicates are split across worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import CONTINUOUS, DISCRETE_DAYS, ObservationSet, reduce
from .npmle import DiscreteDistribution, FitResult, icm_fit
from .parametric import WeibullParams, truncated_weibull_sample
from .smooth import CDF, DENSITY, KernelDensity, default_grid, density_values, smle_values

ROUND_TO_DAY = "round_to_day"
ROUNDINGS = (ROUND_TO_DAY, CONTINUOUS)
TARGETS = (DENSITY, CDF)

ENVELOPE_FACTOR = 1.05


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))


REPLICATE_TOL = 1e-8


def fit_sample(sample: ObservationSet, tol: float = REPLICATE_TOL, max_iter: int = 2_000) -> FitResult:
    """NPMLE of a resampled or simulated sample via ICM.

    The tolerance is looser than the :func:`icm_fit` default: for samples
    of a thousand continuous observations the Fenchel gradients are large
    enough that rounding keeps the violation near ``1e-10``, while ``1e-8``
    is reached in under a hundred iterations.
    """
    return icm_fit(reduce(sample), tol=tol, max_iter=max_iter)


def run_replicates(worker, args, B: int, n_jobs: int):
    """Evaluate ``worker(r, *args)`` for ``r = 0..B-1`` and return results in replicate order."""
    if n_jobs is None or n_jobs <= 1 or B < 2:
        return [worker(r, *args) for r in range(B)]
    chunks = [list(range(k, B, n_jobs)) for k in range(n_jobs)]
    out = [None] * B
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(_chunk, worker, chunk, args) for chunk in chunks]
        for chunk, fut in zip(chunks, futures):
            for r, res in zip(chunk, fut.result()):
                out[r] = res
    return out


def _chunk(worker, chunk, args):
    return [worker(r, *args) for r in chunk]


# -- random variate generation ----------------------------------------------


def envelope_bound(density_eval, lo: float, hi: float, step: float = 0.01) -> float:
    """Constant envelope: 5% above the maximum of the density on a fine grid."""
    grid = np.arange(lo, hi + step / 2, step)
    return ENVELOPE_FACTOR * float(np.max(density_eval(grid)))


def rejection_sample_density(
    density_eval,
    support: tuple[float, float],
    bound: float,
    rng: np.random.Generator,
    size: int | None = None,
    max_proposals: int = 10_000_000,
):
    """Draw from the normalized ``density_eval`` on ``support`` by rejection from a uniform.

    Raises ``ValueError`` if the density exceeds ``bound`` at a proposed point,
    and ``RuntimeError`` if ``max_proposals`` proposals yield too few draws
    (for instance when the density vanishes on the whole support).
    """
    lo, hi = map(float, support)
    if not (bound > 0 and hi > lo):
        raise ValueError("need bound > 0 and a nonempty support")
    want = 1 if size is None else int(size)
    out = np.empty(want)
    got = 0
    proposed = 0
    batch = max(2 * want, 64)
    while got < want:
        if proposed >= max_proposals:
            raise RuntimeError(f"rejection sampler produced {got}/{want} draws in {proposed} proposals")
        x = lo + (hi - lo) * rng.random(batch)
        u = rng.random(batch)
        fx = density_eval(x)
        if np.any(fx > bound):
            raise ValueError(f"envelope bound {bound} violated (density {fx.max()})")
        proposed += batch
        acc = x[u * bound <= fx]
        take = min(acc.size, want - got)
        out[got:got + take] = acc[:take]
        got += take
    return out[0] if size is None else out


def reference_sampler(g_ref: KernelDensity) -> tuple[tuple[float, float], float]:
    """Support and envelope for rejection sampling from a kernel density.

    The support is cut at 0: incubation times are positive, while the
    unbounded-support kernel estimate can put a little mass below 0.
    """
    lo, hi = g_ref.support
    lo = max(lo, 0.0)
    return (lo, hi), envelope_bound(g_ref, lo, hi)


def _incubation_draws(g_ref, size, rng, sampler=None):
    support, bound = sampler if sampler is not None else reference_sampler(g_ref)
    return rejection_sample_density(g_ref, support, bound, rng, size)


def bootstrap_sums(exits, g_ref: KernelDensity, rng: np.random.Generator, sampler=None):
    """Unrounded ``V* + W*`` with ``V* ~ Uniform(0, E_i)`` and ``W* ~ g_ref``."""
    exits = np.asarray(exits, dtype=float)
    v = exits * rng.random(exits.size)
    w = _incubation_draws(g_ref, exits.size, rng, sampler)
    return v + w


def bootstrap_resample(
    exits,
    g_ref: KernelDensity,
    rounding: str = ROUND_TO_DAY,
    rng: np.random.Generator | None = None,
    sampler=None,
) -> ObservationSet:
    """One smoothed-bootstrap sample keeping the original exit times.

    ``delta* = 1{V* + W* <= E}`` is taken from the unrounded sum.  After
    rounding, a sum in ``(E, E + 1/2)`` lands on ``S* = E`` with
    ``delta* = 0``; its censoring interval ``(S* - E, S*] = (0, E]`` is then
    the same as for ``delta* = 1``, so the record is stored in that form.
    Rounded onsets of 0 are moved to day 1.
    """
    if rounding not in ROUNDINGS:
        raise ValueError(f"unknown rounding {rounding!r}")
    rng = np.random.default_rng() if rng is None else rng
    exits = np.asarray(exits, dtype=float)
    sums = bootstrap_sums(exits, g_ref, rng, sampler)
    if rounding == ROUND_TO_DAY:
        s = np.maximum(np.floor(sums + 0.5), 1.0)
        scale = DISCRETE_DAYS if np.all(exits == np.round(exits)) else CONTINUOUS
        return ObservationSet(exits, s, scale)
    return ObservationSet(exits, sums, CONTINUOUS)


# -- smoothed bootstrap bandwidth selection -----------------------------------


@dataclass(frozen=True)
class BandwidthCurve:
    h_values: np.ndarray
    mse: np.ndarray
    target: str
    B: int
    h0: float
    minimizer: float
    n_dropped: int = 0
    per_replicate: np.ndarray = field(default=None, repr=False)

    def to_csv(self) -> str:
        rows = ["h,mse"] + [f"{h:.10g},{v:.12g}" for h, v in zip(self.h_values, self.mse)]
        return "\n".join(rows) + "\n"

    def metadata(self) -> dict:
        return {
            "target": self.target,
            "B": self.B,
            "h0": self.h0,
            "minimizer": self.minimizer,
            "n_dropped": self.n_dropped,
        }


def _estimator(target):
    return density_values if target == DENSITY else smle_values


def _ise(curves, ref, step):
    return np.sum((curves - ref) ** 2, axis=-1) * step


def _bandwidth_replicate(r, seed, exits, g_ref, sampler, rounding, target, h_grid, xgrid, ref, step):
    rng = replicate_rng(seed, r)
    boot = bootstrap_resample(exits, g_ref, rounding, rng, sampler)
    fit = fit_sample(boot)
    if not fit.converged:
        return None
    dist = fit.distribution.trimmed()
    est = _estimator(target)
    curves = np.stack([est(dist, h, xgrid) for h in h_grid])
    return _ise(curves, ref, step)


def select_bandwidth(
    sample: ObservationSet,
    target: str = DENSITY,
    h_grid=None,
    h0: float = 4.0,
    B: int = 1000,
    seed: int = 0,
    rounding: str = ROUND_TO_DAY,
    xgrid=None,
    n_jobs: int = 1,
) -> BandwidthCurve:
    """Smoothed-bootstrap MSE curve over ``h_grid`` and its minimizer.

    Bootstrap samples keep the exit times and draw incubation times from the
    density estimate with bandwidth ``h0``.  For each replicate the NPMLE is
    refitted and the target estimator (density or SMLE) at every ``h`` is
    compared with the reference estimate at ``h0`` by the integrated squared
    difference, a left-endpoint Riemann sum on ``xgrid`` (default
    ``[0, 14)`` in steps of 0.1).  Replicates whose refit does not converge
    are dropped and counted.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    h_grid = np.round(np.arange(2.0, 7.0 + 1e-9, 0.2), 10) if h_grid is None else np.asarray(h_grid, float)
    if h_grid.size == 0:
        raise ValueError("empty bandwidth grid")
    if xgrid is None:
        xgrid = default_grid(0.0, 14.0, 0.1)[:-1]
    xgrid = np.asarray(xgrid, dtype=float)
    step = float(xgrid[1] - xgrid[0]) if xgrid.size > 1 else 1.0
    fit = fit_sample(sample)
    if not fit.converged:
        raise RuntimeError(f"NPMLE of the sample did not converge: {fit.message}")
    dist = fit.distribution.trimmed()
    g_ref = KernelDensity(dist, h0)
    sampler = reference_sampler(g_ref)
    ref = _estimator(target)(dist, h0, xgrid)
    results = run_replicates(
        _bandwidth_replicate,
        (seed, sample.exits, g_ref, sampler, rounding, target, h_grid, xgrid, ref, step),
        B,
        n_jobs,
    )
    kept = np.array([r for r in results if r is not None])
    if kept.size == 0:
        raise RuntimeError("no bootstrap replicate converged")
    mse = kept.mean(axis=0)
    return BandwidthCurve(
        h_values=h_grid,
        mse=mse,
        target=target,
        B=B,
        h0=float(h0),
        minimizer=float(h_grid[np.argmin(mse)]),
        n_dropped=B - kept.shape[0],
        per_replicate=kept,
    )


# -- continuous simulation model ------------------------------------------------


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 1000
    M: float = 30.0
    M1: float = 20.0
    weibull: WeibullParams = WeibullParams(3.03514, 0.002619)
    rounding: str = CONTINUOUS
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.M1 <= self.M:
            raise ValueError("need 0 < M1 <= M")
        if self.n < 1:
            raise ValueError("need n >= 1")
        if self.rounding not in ROUNDINGS:
            raise ValueError(f"unknown rounding {self.rounding!r}")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "M": self.M,
            "M1": self.M1,
            "a": self.weibull.a,
            "b": self.weibull.b,
            "rounding": self.rounding,
            "seed": self.seed,
        }


def simulate_continuous(config: SimulationConfig, rng: np.random.Generator | None = None) -> ObservationSet:
    """Draw ``E ~ U[0, M]``, ``V | E ~ U[0, E]``, ``W ~`` Weibull truncated to ``[0, M1]``.

    Returns the triples with ``S = V + W``.  With ``round_to_day`` both times
    are rounded to whole days (at least 1).
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed)) if rng is None else rng
    n = config.n
    e = config.M * rng.random(n)
    v = e * rng.random(n)
    w = truncated_weibull_sample(config.weibull, config.M1, rng, n)
    s = v + w
    if config.rounding == ROUND_TO_DAY:
        return ObservationSet(
            np.maximum(np.floor(e + 0.5), 1.0), np.maximum(np.floor(s + 0.5), 1.0), DISCRETE_DAYS
        )
    # E = 0 has probability zero but would make an empty interval
    e = np.maximum(e, np.finfo(float).tiny)
    return ObservationSet(e, s, CONTINUOUS)


def simulation_stream(seed: int, index: int) -> np.random.Generator:
    """Generator for the ``index``-th of a family of independent simulated samples."""
    return replicate_rng(seed, index)


# -- subsample bandwidth selection ---------------------------------------------


@dataclass(frozen=True)
class SubsampleResult:
    c_values: np.ndarray
    mse: np.ndarray
    c_hat: float
    bandwidth: float
    m: int
    n: int
    B: int
    n_dropped: int = 0

    def to_csv(self) -> str:
        rows = ["c,mse"] + [f"{c:.10g},{v:.12g}" for c, v in zip(self.c_values, self.mse)]
        return "\n".join(rows) + "\n"

    def metadata(self) -> dict:
        return {
            "c_hat": self.c_hat,
            "bandwidth": self.bandwidth,
            "m": self.m,
            "n": self.n,
            "B": self.B,
            "n_dropped": self.n_dropped,
        }


def _subsample_replicate(r, seed, exits, symptoms, scale, m, bandwidths, xgrid, ref, step):
    rng = replicate_rng(seed, r)
    idx = rng.integers(0, exits.size, m)
    fit = fit_sample(ObservationSet(exits[idx], symptoms[idx], scale))
    if not fit.converged:
        return None
    dist = fit.distribution.trimmed()
    curves = np.stack([density_values(dist, h, xgrid) for h in bandwidths])
    return _ise(curves, ref, step)


def subsample_bandwidth(
    sample: ObservationSet,
    m: int = 50,
    c_grid=None,
    h_ref: float = 3.0,
    B: int = 500,
    seed: int = 0,
    xgrid=None,
    n_jobs: int = 1,
) -> SubsampleResult:
    """Choose ``c`` in ``h = c n^{-1/7}`` from bootstrap subsamples of size ``m``.

    Each subsample (drawn with replacement) is fitted and its density
    estimate at bandwidth ``c m^{-1/7}`` compared with the full-sample
    estimate at ``h_ref``.  The ``c`` minimizing the mean integrated squared
    difference is returned rescaled to the full sample size.
    """
    n = len(sample)
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= n")
    c_grid = np.round(np.arange(4.0, 16.0 + 1e-9, 0.2), 10) if c_grid is None else np.asarray(c_grid, float)
    if c_grid.size == 0:
        raise ValueError("empty c grid")
    bandwidths = c_grid * m ** (-1.0 / 7.0)
    fit = fit_sample(sample)
    if not fit.converged:
        raise RuntimeError(f"NPMLE of the sample did not converge: {fit.message}")
    dist = fit.distribution.trimmed()
    if xgrid is None:
        xgrid = default_grid(0.0, float(dist.support[-1] + bandwidths.max()), 0.1)[:-1]
    xgrid = np.asarray(xgrid, dtype=float)
    step = float(xgrid[1] - xgrid[0])
    ref = density_values(dist, h_ref, xgrid)
    if c_grid.size == 1:
        return SubsampleResult(c_grid, np.zeros(1), float(c_grid[0]), float(c_grid[0] * n ** (-1 / 7)), m, n, 0)
    results = run_replicates(
        _subsample_replicate,
        (seed, np.asarray(sample.exits), np.asarray(sample.symptoms), sample.scale, m, bandwidths, xgrid, ref, step),
        B,
        n_jobs,
    )
    kept = np.array([r for r in results if r is not None])
    if kept.size == 0:
        raise RuntimeError("no subsample fit converged")
    mse = kept.mean(axis=0)
    c_hat = float(c_grid[np.argmin(mse)])
    return SubsampleResult(c_grid, mse, c_hat, c_hat * n ** (-1.0 / 7.0), m, n, B, B - kept.shape[0])


# -- pointwise percentile confidence bands ------------------------------------------


@dataclass(frozen=True)
class ConfidenceBand:
    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    estimate: np.ndarray
    level: float
    B: int
    n_dropped: int = 0

    def to_csv(self) -> str:
        rows = ["t,lower,estimate,upper"]
        rows += [
            f"{t:.10g},{lo:.12g},{est:.12g},{hi:.12g}"
            for t, lo, est, hi in zip(self.grid, self.lower, self.estimate, self.upper)
        ]
        return "\n".join(rows) + "\n"

    def metadata(self) -> dict:
        return {"level": self.level, "B": self.B, "n_dropped": self.n_dropped}


def _ci_replicate(r, seed, exits, symptoms, scale, h, grid):
    rng = replicate_rng(seed, r)
    idx = rng.integers(0, exits.size, exits.size)
    fit = fit_sample(ObservationSet(exits[idx], symptoms[idx], scale))
    if not fit.converged:
        return None
    return density_values(fit.distribution.trimmed(), h, grid)


def bootstrap_ci_density(
    sample: ObservationSet,
    h: float,
    grid=None,
    B: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    n_jobs: int = 1,
) -> ConfidenceBand:
    """Pointwise percentile intervals for the density from ordinary bootstrap resamples.

    Triples are resampled with replacement, the NPMLE and density are
    recomputed, and the lower (upper) bound at each point is the empirical
    ``(1 - level)/2`` (``(1 + level)/2``) quantile, rounded outwards to an
    order statistic.  A few hundred replicates are the practical minimum;
    with ``B = 2`` the band is the pointwise min and max.
    """
    if B < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    fit = fit_sample(sample)
    estimate = density_values(fit.distribution.trimmed(), h, grid)
    results = run_replicates(
        _ci_replicate,
        (seed, np.asarray(sample.exits), np.asarray(sample.symptoms), sample.scale, h, grid),
        B,
        n_jobs,
    )
    kept = np.array([r for r in results if r is not None])
    if kept.shape[0] < 2:
        raise RuntimeError("fewer than two bootstrap refits converged")
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(kept, alpha, axis=0, method="lower")
    upper = np.quantile(kept, 1.0 - alpha, axis=0, method="higher")
    return ConfidenceBand(grid, lower, upper, estimate, level, B, B - kept.shape[0])


def band_covers(band: ConfidenceBand, t: float, value: float) -> bool:
    k = int(np.argmin(np.abs(band.grid - t)))
    return bool(band.lower[k] <= value <= band.upper[k])
