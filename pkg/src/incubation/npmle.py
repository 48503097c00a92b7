"""Nonparametric maximum likelihood for the incubation-time distribution.

Two interchangeable algorithms are provided: the EM (self-consistency)
iteration on point masses, and the iterative convex minorant (ICM)
algorithm on the ordered CDF values of a :class:`~incubation.data.ReducedProblem`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import DISCRETE_DAYS, ReducedProblem


@dataclass(frozen=True)
class DiscreteDistribution:
    """Point masses on a strictly increasing support."""

    support: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        support = np.array(self.support, dtype=float).reshape(-1)
        masses = np.array(self.masses, dtype=float).reshape(-1)
        if support.shape != masses.shape or support.size == 0:
            raise ValueError("support and masses must be nonempty and of equal length")
        if np.any(np.diff(support) <= 0):
            raise ValueError("support must be strictly increasing")
        if np.any(masses < -1e-12):
            raise ValueError("masses must be nonnegative")
        masses = np.clip(masses, 0.0, None)
        if abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {masses.sum()!r}, not 1")
        support.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "masses", masses)

    def cdf(self, x):
        """Right-continuous distribution function."""
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        cum[-1] = 1.0
        return cum[np.searchsorted(self.support, x, side="right")]

    def trimmed(self, eps: float = 0.0) -> "DiscreteDistribution":
        keep = self.masses > eps
        masses = self.masses[keep]
        return DiscreteDistribution(self.support[keep], masses / masses.sum())

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.support.tobytes())
        h.update(self.masses.tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "masses": self.masses.tolist()}


@dataclass(frozen=True)
class FitResult:
    """An NPMLE together with its convergence diagnostics."""

    distribution: DiscreteDistribution
    loglik: float
    iterations: int
    converged: bool
    max_violation: float
    equality_gap: float
    algorithm: str
    message: str = ""
    y: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "support": self.distribution.support.tolist(),
            "masses": self.distribution.masses.tolist(),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "fenchel": {"max_violation": self.max_violation, "equality_gap": self.equality_gap},
            "message": self.message,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass(frozen=True)
class IsotonicState:
    y: np.ndarray
    gradient: np.ndarray
    weights: np.ndarray


def _extended(y, problem: ReducedProblem) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (problem.m,):
        raise ValueError(f"expected {problem.m} CDF values, got shape {y.shape}")
    return np.concatenate([[0.0], y, [1.0]])


def loglik(y, problem: ReducedProblem) -> float:
    """``sum N_ij log(y_j - y_i)`` with ``y_0 = 0`` and ``y_{m+1} = 1``."""
    ext = _extended(y, problem)
    diffs = ext[problem.cell_j] - ext[problem.cell_i]
    if np.any(diffs <= 0):
        return -np.inf
    return float(np.dot(problem.cell_n, np.log(diffs)))


def derivatives(y, problem: ReducedProblem) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and negated diagonal Hessian of :func:`loglik` at ``y``."""
    ext = _extended(y, problem)
    size = problem.m + 2
    diffs = ext[problem.cell_j] - ext[problem.cell_i]
    r1 = problem.cell_n / diffs
    r2 = r1 / diffs
    grad = np.bincount(problem.cell_j, r1, size) - np.bincount(problem.cell_i, r1, size)
    weights = np.bincount(problem.cell_j, r2, size) + np.bincount(problem.cell_i, r2, size)
    return grad[1:-1], weights[1:-1]


def isotonic_state(y, problem: ReducedProblem) -> IsotonicState:
    g, w = derivatives(y, problem)
    return IsotonicState(np.asarray(y, dtype=float), g, w)


def interval_loglik(dist: DiscreteDistribution, problem: ReducedProblem) -> float:
    """Censored log-likelihood of ``dist`` over all observations of ``problem``."""
    probs = dist.cdf(problem.rights) - dist.cdf(problem.lefts)
    if np.any(probs <= 0):
        return -np.inf
    return float(np.log(probs).sum())


# -- EM ---------------------------------------------------------------------


def em_support(problem: ReducedProblem) -> np.ndarray:
    """Default EM support: days ``1..max S`` on the day scale, else the reduced support."""
    if problem.scale == DISCRETE_DAYS:
        return np.arange(1.0, problem.rights.max() + 1.0)
    return problem.support


def _membership(problem: ReducedProblem, support: np.ndarray) -> np.ndarray:
    s = np.asarray(support, dtype=float)
    return ((problem.lefts[:, None] < s) & (s <= problem.rights[:, None])).astype(float)


def _em_update(p, A, n):
    denom = A @ p
    ratio = np.divide(1.0, denom, out=np.zeros_like(denom), where=denom > 0)
    return p * (A.T @ ratio) / n


def em_step(p, problem: ReducedProblem, support=None) -> np.ndarray:
    """One self-consistency update of the masses ``p`` on ``support``.

    ``p_j' = p_j n^{-1} sum_i 1{j in (T_i, U_i]} / sum_{k in (T_i, U_i]} p_k``,
    with a ratio of zero whenever its denominator vanishes.
    """
    p = np.asarray(p, dtype=float)
    if support is None:
        support = problem.support if p.size == problem.m + 1 else em_support(problem)
    support = np.asarray(support, dtype=float)
    if support.shape != p.shape:
        raise ValueError("masses and support differ in length")
    return _em_update(p, _membership(problem, support), problem.n)


def em_fit(
    problem: ReducedProblem,
    init=None,
    support=None,
    max_iter: int = 100_000,
    tol: float = 1e-10,
) -> FitResult:
    """Iterate :func:`em_step` until the largest mass change drops below ``tol``.

    Starts from the discrete uniform distribution on ``support`` unless
    ``init`` is given.  Hitting ``max_iter`` is reported through
    ``converged=False`` rather than raised.
    """
    support = em_support(problem) if support is None else np.asarray(support, dtype=float)
    A = _membership(problem, support)
    if init is None:
        p = np.full(support.size, 1.0 / support.size)
    else:
        p = np.asarray(init, dtype=float)
        if p.shape != support.shape:
            raise ValueError("init and support differ in length")
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = _em_update(p, A, problem.n)
        change = np.max(np.abs(new - p))
        p = new
        if change < tol:
            converged = True
            break
    dist = DiscreteDistribution(support, p / p.sum())
    y = dist.cdf(problem.grid)
    viol, gap = check_fenchel(y, problem)
    return FitResult(
        distribution=dist,
        loglik=interval_loglik(dist, problem),
        iterations=it,
        converged=converged,
        max_violation=viol,
        equality_gap=gap,
        algorithm="em",
        message="" if converged else f"max mass change {change:.3g} after {it} iterations",
        y=y,
    )


# -- ICM --------------------------------------------------------------------


def cusum_diagram(state: IsotonicState) -> tuple[np.ndarray, np.ndarray]:
    """Points ``(0, 0)`` and ``sum_{j<=i} (w_j, g_j + w_j y_j)``, ``i = 1..m``."""
    w = np.asarray(state.weights, dtype=float)
    if np.any(w <= 0):
        raise FloatingPointError("cusum diagram needs strictly positive weights")
    x = np.concatenate([[0.0], np.cumsum(w)])
    y = np.concatenate([[0.0], np.cumsum(state.gradient + w * state.y)])
    return x, y


def gcm_left_derivatives(x, y) -> np.ndarray:
    """Left derivatives of the greatest convex minorant at ``x[1:]``.

    Pool-adjacent-violators on the chord slopes, weighted by the abscissa
    increments.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = np.diff(x)
    dy = np.diff(y)
    n = dx.size
    # blocks as (sum_dy, sum_dx, count)
    sy = [0.0] * n
    sx = [0.0] * n
    cnt = [0] * n
    top = -1
    for k in range(n):
        top += 1
        sy[top], sx[top], cnt[top] = dy[k], dx[k], 1
        while top > 0 and sy[top - 1] * sx[top] >= sy[top] * sx[top - 1]:
            sy[top - 1] += sy[top]
            sx[top - 1] += sx[top]
            cnt[top - 1] += cnt[top]
            top -= 1
    out = np.empty(n)
    pos = 0
    for b in range(top + 1):
        out[pos:pos + cnt[b]] = sy[b] / sx[b]
        pos += cnt[b]
    return out


def check_fenchel(y, problem: ReducedProblem) -> tuple[float, float]:
    """Largest violation of the cumulative-gradient inequalities, and ``|sum y_i g_i|``.

    Both the upper-tail form ``sum_{j>=i} g_j <= 0`` and the lower-tail form
    ``sum_{j<=i} g_j >= 0`` are checked.
    """
    if problem.m == 0:
        return 0.0, 0.0
    y = np.asarray(y, dtype=float)
    g, _ = derivatives(y, problem)
    if not np.all(np.isfinite(g)):
        return np.inf, np.inf
    upper = np.cumsum(g[::-1])[::-1]
    lower = np.cumsum(g)
    viol = max(0.0, float(upper.max()), float(-lower.min()))
    return viol, abs(float(np.dot(y, g)))


def _compress(problem: ReducedProblem):
    """Drop interior indices that no cell references; they cannot carry mass."""
    m = problem.m
    used = np.zeros(m + 2, dtype=bool)
    used[problem.cell_i] = True
    used[problem.cell_j] = True
    used[0] = used[m + 1] = True
    if used.all():
        return problem, None
    new_index = np.cumsum(used) - 1
    active = np.flatnonzero(used[1:-1])
    sub = ReducedProblem(
        grid=problem.grid[active],
        upper=problem.upper,
        cell_i=new_index[problem.cell_i],
        cell_j=new_index[problem.cell_j],
        cell_n=problem.cell_n,
        obs_index=new_index[problem.obs_index],
        lefts=problem.lefts,
        rights=problem.rights,
        n_uninformative=problem.n_uninformative,
        scale=problem.scale,
    )
    return sub, active


def _expand(y_active, active, m):
    if active is None:
        return y_active
    full_pos = np.searchsorted(active, np.arange(m), side="right") - 1
    ext = np.concatenate([[0.0], y_active])
    return ext[full_pos + 1]


def _distribution_from_y(y, problem: ReducedProblem) -> DiscreteDistribution:
    ext = np.concatenate([[0.0], y, [1.0]])
    return DiscreteDistribution(problem.support, np.diff(ext))


def icm_fit(
    problem: ReducedProblem,
    init=None,
    max_iter: int = 10_000,
    tol: float = 1e-10,
    min_step: float = 1e-12,
) -> FitResult:
    """Maximize the reduced log-likelihood with the iterative convex minorant algorithm.

    Each iteration takes the left-derivative vector of the greatest convex
    minorant of the cusum diagram as the candidate, and backtracks by halving
    along the segment towards it until the step improves the likelihood.  A
    step is accepted when it satisfies an Armijo condition or when the
    directional derivative at the new point is still nonnegative (which, by
    concavity along the segment, means the objective did not decrease).
    Iteration stops once the Fenchel conditions hold to within ``tol``.
    """
    m = problem.m
    if m == 0:
        dist = DiscreteDistribution([problem.upper], [1.0])
        return FitResult(dist, interval_loglik(dist, problem), 0, True, 0.0, 0.0, "icm", y=np.empty(0))

    sub, active = _compress(problem)
    ms = sub.m
    if init is None:
        y = np.arange(1, ms + 1) / (ms + 1)
    else:
        y = np.asarray(init, dtype=float)
        if y.shape == (m,) and active is not None:
            y = y[active]
        if y.shape != (ms,) or not (0 < y[0] and y[-1] < 1 and np.all(np.diff(y) >= 0)):
            raise ValueError("init must be ordered CDF values strictly inside (0, 1)")
    f = loglik(y, sub)
    if not np.isfinite(f):
        raise ValueError("log-likelihood is not finite at the initial point")

    converged = False
    message = ""
    it = 0
    viol = gap = np.inf
    for it in range(max_iter + 1):
        g, w = derivatives(y, sub)
        upper = np.cumsum(g[::-1])[::-1]
        viol = max(0.0, float(upper.max()), float(-np.cumsum(g).min()))
        gap = abs(float(np.dot(y, g)))
        if viol <= tol and gap <= tol:
            converged = True
            break
        if it == max_iter:
            message = f"Fenchel violation {viol:.3g} after {max_iter} iterations"
            break
        x_pts, y_pts = cusum_diagram(IsotonicState(y, g, w))
        target = np.clip(gcm_left_derivatives(x_pts, y_pts), 0.0, 1.0)
        d = target - y
        slope = float(np.dot(g, d))
        lam = 1.0
        accepted = False
        while lam >= min_step:
            cand = y + lam * d
            f_c = loglik(cand, sub)
            if np.isfinite(f_c):
                if f_c >= f + 1e-4 * lam * slope:
                    accepted = True
                elif np.dot(derivatives(cand, sub)[0], d) >= 0:
                    accepted = True
            if accepted:
                break
            lam *= 0.5
        if not accepted:
            message = f"line search failed at iteration {it}; Fenchel violation {viol:.3g}"
            break
        y, f = cand, f_c

    y_full = _expand(y, active, m)
    dist = _distribution_from_y(y_full, problem)
    return FitResult(
        distribution=dist,
        loglik=loglik(y_full, problem),
        iterations=it,
        converged=converged,
        max_violation=viol,
        equality_gap=gap,
        algorithm="icm",
        message=message,
        y=y_full,
    )


def fit_npmle(problem: ReducedProblem, algorithm: str = "icm", **kw) -> FitResult:
    if algorithm == "icm":
        return icm_fit(problem, **kw)
    if algorithm == "em":
        return em_fit(problem, **kw)
    raise ValueError(f"unknown algorithm {algorithm!r}")
