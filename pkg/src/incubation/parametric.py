"""Weibull baseline fitted by Hooke-Jeeves pattern search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import ObservationSet


@dataclass(frozen=True)
class WeibullParams:
    """``G(x) = 1 - exp(-b x^a)`` for ``x > 0``; ``a`` is the shape, ``b`` the rate."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"Weibull parameters must be positive, got a={self.a}, b={self.b}")


WUHAN_WEIBULL = WeibullParams(3.03514, 0.002619)


def weibull_cdf(params: WeibullParams, x):
    x = np.asarray(x, dtype=float)
    pos = np.clip(x, 0.0, None)
    return np.where(x > 0, -np.expm1(-params.b * pos ** params.a), 0.0)


def weibull_pdf(params: WeibullParams, x):
    x = np.asarray(x, dtype=float)
    pos = np.clip(x, 0.0, None)
    a, b = params.a, params.b
    with np.errstate(divide="ignore", invalid="ignore"):
        val = a * b * pos ** (a - 1) * np.exp(-b * pos ** a)
    return np.where(x > 0, val, 0.0)


def weibull_loglik(params: WeibullParams, sample: ObservationSet) -> float:
    """``sum delta log G(S) + (1 - delta) log(G(S) - G(S - E))``."""
    upper = weibull_cdf(params, sample.symptoms)
    lower = weibull_cdf(params, sample.symptoms - sample.exits)
    probs = np.where(sample.deltas == 1, upper, upper - lower)
    if np.any(probs <= 0):
        return -np.inf
    return float(np.log(probs).sum())


@dataclass(frozen=True)
class PatternSearchConfig:
    init: tuple[float, ...]
    initial_step: float | tuple[float, ...] = 0.5
    shrink_factor: float = 0.5
    min_step: float = 1e-8
    max_evals: int = 100_000

    def __post_init__(self):
        if not 0 < self.shrink_factor < 1:
            raise ValueError("shrink_factor must lie in (0, 1)")
        if not self.min_step > 0:
            raise ValueError("min_step must be positive")
        if self.max_evals < 1:
            raise ValueError("max_evals must be positive")


@dataclass(frozen=True)
class PatternSearchResult:
    x: np.ndarray
    value: float
    evals: int
    converged: bool


def hooke_jeeves(objective: Callable[[np.ndarray], float], config: PatternSearchConfig) -> PatternSearchResult:
    """Maximize ``objective`` by Hooke-Jeeves pattern search.

    Exploratory moves probe each coordinate by plus and minus its step; a
    successful exploration is followed by pattern moves that extrapolate
    along the improving direction for as long as that keeps paying off.
    When exploration fails, all steps are multiplied by ``shrink_factor``.
    Points where the objective is not finite count as infeasible.
    """
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        v = objective(x)
        return v if np.isfinite(v) else -np.inf

    base = np.asarray(config.init, dtype=float).copy()
    steps = np.broadcast_to(np.asarray(config.initial_step, dtype=float), base.shape).copy()
    f_base = f(base)
    if not np.isfinite(f_base):
        raise ValueError("objective is not finite at the initial point")

    def explore(point, value):
        point = point.copy()
        for k in range(point.size):
            for sign in (1.0, -1.0):
                trial = point.copy()
                trial[k] += sign * steps[k]
                v = f(trial)
                if v > value:
                    point, value = trial, v
                    break
        return point, value

    while np.max(steps) >= config.min_step and evals < config.max_evals:
        new, f_new = explore(base, f_base)
        if f_new > f_base:
            while evals < config.max_evals:
                prev = base
                base, f_base = new, f_new
                pattern = base + (base - prev)
                f_pat = f(pattern)
                new, f_new = explore(pattern, f_pat)
                if not f_new > f_base:
                    break
        else:
            steps *= config.shrink_factor
    converged = bool(np.max(steps) < config.min_step)
    return PatternSearchResult(base, float(f_base), evals, converged)


@dataclass(frozen=True)
class WeibullFit:
    params: WeibullParams
    loglik: float
    evals: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "a": self.params.a,
            "b": self.params.b,
            "loglik": self.loglik,
            "evals": self.evals,
            "converged": self.converged,
        }


def fit_weibull(
    sample: ObservationSet,
    init: WeibullParams = WeibullParams(2.0, 0.01),
    initial_step: float = 0.5,
    shrink_factor: float = 0.5,
    min_step: float = 1e-8,
    max_evals: int = 100_000,
) -> WeibullFit:
    """Maximum likelihood Weibull fit, searching over ``(log a, log b)``."""

    def objective(theta):
        a, b = np.exp(theta)
        return weibull_loglik(WeibullParams(a, b), sample)

    config = PatternSearchConfig(
        init=(np.log(init.a), np.log(init.b)),
        initial_step=initial_step,
        shrink_factor=shrink_factor,
        min_step=min_step,
        max_evals=max_evals,
    )
    res = hooke_jeeves(objective, config)
    a, b = np.exp(res.x)
    return WeibullFit(WeibullParams(float(a), float(b)), res.value, res.evals, res.converged)


def truncated_weibull_cdf(params: WeibullParams, M1: float, x):
    """Weibull distribution function conditioned on ``[0, M1]``."""
    x = np.asarray(x, dtype=float)
    top = float(weibull_cdf(params, M1))
    return np.where(x >= M1, 1.0, weibull_cdf(params, x) / top)


def truncated_weibull_density(params: WeibullParams, M1: float, x):
    x = np.asarray(x, dtype=float)
    top = float(weibull_cdf(params, M1))
    return np.where((x > 0) & (x <= M1), weibull_pdf(params, x) / top, 0.0)


def truncated_weibull_quantile(params: WeibullParams, M1: float, u):
    """Inverse of ``x -> G(x) / G(M1)`` on ``[0, M1]``."""
    top = float(weibull_cdf(params, M1))
    if not top > 0:
        raise ValueError("Weibull distribution puts no mass on [0, M1]")
    u = np.asarray(u, dtype=float)
    x = (-np.log1p(-u * top) / params.b) ** (1.0 / params.a)
    return np.minimum(x, M1)


def truncated_weibull_sample(params: WeibullParams, M1: float, rng: np.random.Generator, size=None):
    return truncated_weibull_quantile(params, M1, rng.random(size))
