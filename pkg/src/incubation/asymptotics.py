"""Score function of the density estimate in the continuous model and its variance.

For exit times ``E ~ U[0, M]``, infection times uniform on ``[0, E]`` and an
incubation distribution ``G`` supported on ``[0, M1]``, the density estimate
at ``t`` behaves like ``int theta dP_n`` with the score

    theta(e, s, delta) = delta phi(s) / G(s)
                         + (1 - delta) (phi(s) - phi(s - e)) / (G(s) - G(s - e)),

where ``phi`` vanishes on ``[M1, inf)`` and solves the linear integral
equation assembled in :func:`assemble_system`.  The predicted variance of
``n^{2/7} g_nh(t)`` is ``n^{-3/7} E theta^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .bootstrap import SimulationConfig, fit_sample, run_replicates, simulate_continuous, simulation_stream
from .parametric import truncated_weibull_cdf
from .smooth import density_values, kernel_derivative

ZERO_DIFF = 1e-14


def _safe_div(num, den):
    """Elementwise ``num / den`` with ``0/0 = 0`` (any ``|den| < ZERO_DIFF`` counts as zero)."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = np.abs(den) >= ZERO_DIFF
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=ok)


@dataclass(frozen=True)
class ScoreSolution:
    """``phi`` on the grid ``w_k = k * delta``, ``k = 0..N`` with ``N delta = M``."""

    grid: np.ndarray
    phi: np.ndarray
    t: float
    h: float
    M: float
    M1: float
    G: Callable = field(repr=False)
    delta: float
    residual: float = 0.0
    method: str = "direct"
    iterations: int = 0

    @property
    def K(self) -> int:
        """Grid index of ``M1``."""
        return int(round(self.M1 / self.delta))

    @property
    def N(self) -> int:
        return self.grid.size - 1

    def phi_at(self, x):
        """Linear interpolation of ``phi``; 0 at and beyond ``M1`` and at or below 0."""
        x = np.asarray(x, dtype=float)
        return np.where((x <= 0) | (x >= self.M1), 0.0, np.interp(x, self.grid, self.phi))

    def G_on(self, count: int) -> np.ndarray:
        return np.asarray(self.G(self.delta * np.arange(count)), dtype=float)

    def scaled(self, factor: float) -> "ScoreSolution":
        return replace(self, phi=self.phi * factor, residual=self.residual * abs(factor))

    def to_csv(self) -> str:
        rows = ["w,phi"] + [f"{w:.10g},{p:.12g}" for w, p in zip(self.grid, self.phi)]
        return "\n".join(rows) + "\n"


def _check_cdf(G, M1, delta):
    x = np.arange(0.0, M1 + delta / 2, delta)
    g = np.asarray(G(x), dtype=float)
    if g.shape != x.shape or not np.all(np.isfinite(g)):
        raise ValueError("G must map an array of points to an array of the same shape")
    if np.any(g < 0) or np.any(g > 1) or np.any(np.diff(g) < -1e-15):
        raise ValueError("G is not a distribution function on [0, M1]")
    if abs(float(G(np.array([M1]))[0]) - 1.0) > 1e-10:
        raise ValueError("G(M1) must equal 1")


def assemble_system(G, t: float, h: float, M: float, M1: float, delta: float):
    """Discretize the integral equation for ``phi`` at ``w_k = k delta``, ``k = 1..K-1``.

    The equation at ``w`` reads

        - phi(w) log(M/w) / (M G(w))
        + (1/M) int_0^w (1/e) [ (phi(w+e) - phi(w)) / (G(w+e) - G(w))
                                - (phi(w) - phi(w-e)) / (G(w) - G(w-e)) ] de
        + (1/M) int_w^M (1/e) (phi(w+e) - phi(w)) / (G(w+e) - G(w)) de
        = d/dw K_h(w - t).

    The ``e``-integrals are Riemann sums over ``e_j = j delta``, ``j = 1..N``,
    each node used once (``j <= k`` in the first, ``j > k`` in the second).
    ``phi(0) = 0`` and ``phi = 0`` from ``M1`` on; difference quotients with
    ``|G difference| < 1e-14`` are dropped.  Returns ``(A, rhs)`` for the
    unknowns ``phi_1..phi_{K-1}``.
    """
    N = int(round(M / delta))
    K = int(round(M1 / delta))
    if abs(N * delta - M) > 1e-9 or abs(K * delta - M1) > 1e-9:
        raise ValueError("M and M1 must be multiples of the grid step")
    k = np.arange(1, K)[:, None]
    j = np.arange(1, N + 1)[None, :]
    Gx = np.asarray(G(delta * np.arange(N + K + 1)), dtype=float)
    c = 1.0 / (M * j)  # delta / (M e_j)

    up = Gx[k + j] - Gx[k]
    cu = np.where(up >= ZERO_DIFF, c / np.where(up >= ZERO_DIFF, up, 1.0), 0.0)
    low_idx = np.clip(k - j, 0, None)
    down = Gx[k] - Gx[low_idx]
    in_left = j <= k
    cd = np.where(in_left & (down >= ZERO_DIFF), c / np.where(down >= ZERO_DIFF, down, 1.0), 0.0)

    w = delta * np.arange(1, K)
    A = np.zeros((K + 1, K + 1))
    rows = np.broadcast_to(k, cu.shape)
    A[np.arange(1, K), np.arange(1, K)] = -np.log(M / w) / (M * Gx[1:K]) - cu.sum(axis=1) - cd.sum(axis=1)
    # neighbour above: index k + j, dropped once phi vanishes (>= K)
    hi = np.minimum(k + j, K)
    np.add.at(A, (rows, hi), cu)
    np.add.at(A, (rows, low_idx), cd)
    rhs = kernel_derivative((w - t) / h) / (h * h)
    return A[1:K, 1:K], rhs


def solve_phi(
    G,
    t: float,
    h: float,
    M: float = 30.0,
    M1: float = 20.0,
    delta: float = 0.05,
    method: str = "direct",
    damping: float = 0.5,
    tol: float = 1e-13,
    max_iter: int = 1_000_000,
) -> ScoreSolution:
    """Solve the discretized integral equation for ``phi``.

    ``method="direct"`` uses a dense LU solve; ``method="iteration"`` runs the
    damped fixed-point iteration ``phi <- (1 - damping) phi + damping
    D^{-1}(rhs - O phi)`` with ``D`` the diagonal and ``O`` the off-diagonal
    part of the system, until the update is below ``tol``.
    """
    _check_cdf(G, M1, delta)
    A, rhs = assemble_system(G, t, h, M, M1, delta)
    N = int(round(M / delta))
    K = int(round(M1 / delta))
    iterations = 0
    if method == "direct":
        try:
            x = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular system (cond={np.linalg.cond(A):.3g})") from exc
    elif method == "iteration":
        D = np.diag(A).copy()
        if np.any(D == 0):
            raise np.linalg.LinAlgError("zero diagonal entry in the discretized system")
        O = A - np.diag(D)
        x = np.zeros_like(rhs)
        for iterations in range(1, max_iter + 1):
            new = (1 - damping) * x + damping * (rhs - O @ x) / D
            change = np.max(np.abs(new - x)) if x.size else 0.0
            x = new
            if change < tol:
                break
        else:
            raise RuntimeError(f"fixed-point iteration did not converge in {max_iter} steps")
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError(f"non-finite solution (cond={np.linalg.cond(A):.3g})")
    phi = np.zeros(N + 1)
    phi[1:K] = x
    residual = float(np.max(np.abs(A @ x - rhs))) if x.size else 0.0
    return ScoreSolution(
        grid=delta * np.arange(N + 1),
        phi=phi,
        t=float(t),
        h=float(h),
        M=float(M),
        M1=float(M1),
        G=G,
        delta=float(delta),
        residual=residual,
        method=method,
        iterations=iterations,
    )


def equation_residuals(sol: ScoreSolution) -> np.ndarray:
    """Residuals of the discretized equation at the interior nodes ``w_1..w_{K-1}``."""
    A, rhs = assemble_system(sol.G, sol.t, sol.h, sol.M, sol.M1, sol.delta)
    return A @ sol.phi[1:sol.K] - rhs


def score_theta(e, s, delta, sol: ScoreSolution):
    """The score at observation(s) ``(e, s, delta)``, with ``0/0 = 0``."""
    e = np.asarray(e, dtype=float)
    s = np.asarray(s, dtype=float)
    delta = np.asarray(delta)
    G = sol.G
    gs = np.asarray(G(s), dtype=float)
    first = _safe_div(sol.phi_at(s), gs)
    second = _safe_div(sol.phi_at(s) - sol.phi_at(s - e), gs - np.asarray(G(s - e), dtype=float))
    out = np.where(delta == 1, first, second)
    return out if out.ndim else float(out)


def _phi_ext(sol: ScoreSolution, size: int) -> np.ndarray:
    out = np.zeros(size)
    k = min(size, sol.K)
    out[:k] = sol.phi[:k]
    return out


def _moment(sol: ScoreSolution, power: int, s_upper: int | None) -> float:
    """``E theta^power`` by a Riemann sum over ``e_j = j delta`` and ``s_i = i delta``.

    The pair density of ``(E, S)`` is ``(G(s) - G(s - e)) / (M e)``; the
    ``s``-sum runs over ``i = 1..min(j + K, s_upper)``.
    """
    N, K, d = sol.N, sol.K, sol.delta
    top = N + K if s_upper is None else s_upper
    Gx = sol.G_on(top + 1)
    phi = _phi_ext(sol, top + 1)
    total = 0.0
    for j in range(1, N + 1):
        last = min(j + K, top)
        i1 = np.arange(1, min(j, last) + 1)
        # delta = 1: s <= e, probability weight G(s)
        th1 = _safe_div(phi[i1], Gx[i1])
        part = np.sum(th1**power * Gx[i1])
        if last > j:
            i2 = np.arange(j + 1, last + 1)
            dg = Gx[i2] - Gx[i2 - j]
            th2 = _safe_div(phi[i2] - phi[i2 - j], dg)
            part += np.sum(th2**power * dg)
        total += d * d * part / (sol.M * j * d)
    return float(total)


def mean_theta(sol: ScoreSolution) -> float:
    """``E theta`` under the simulation model; zero up to quadrature error."""
    return _moment(sol, 1, None)


S_RANGES = ("grid", "full")


def second_moment(sol: ScoreSolution, s_range: str = "grid") -> float:
    """``E theta^2``.

    ``s_range="grid"`` restricts the onset variable to the solution grid
    ``(0, M]``; ``"full"`` integrates over the whole support ``(0, e + M1]``.
    """
    if s_range not in S_RANGES:
        raise ValueError(f"s_range must be one of {S_RANGES}")
    return _moment(sol, 2, sol.N if s_range == "grid" else None)


def asymptotic_variance(sol: ScoreSolution, n: int, s_range: str = "grid") -> float:
    """Predicted variance ``n^{-3/7} E theta^2`` of ``n^{2/7}`` times the density estimate."""
    if n < 1:
        raise ValueError("n must be positive")
    return n ** (-3.0 / 7.0) * second_moment(sol, s_range)


def conditional_score_mean(sol: ScoreSolution, w: float, step: float | None = None) -> float:
    """``E[theta(E, S, Delta) | W = w]`` by midpoint quadrature in ``(e, s)``.

    Given ``W = w`` and ``E = e``, the onset ``S`` is uniform on ``[w, w + e]``
    and ``Delta = 1`` exactly when ``S <= e``.
    """
    step = sol.delta / 2 if step is None else step
    ne = int(np.ceil(sol.M / step))
    e = (np.arange(ne) + 0.5) * sol.M / ne
    total = 0.0
    ns = 64
    u = (np.arange(ns) + 0.5) / ns
    for ek in e:
        s = w + ek * u
        th = score_theta(ek, s, (s <= ek).astype(int), sol)
        total += th.mean()  # (1/e) * int ds = mean over s
    return total / ne


# -- variance report ------------------------------------------------------------


@dataclass(frozen=True)
class VarianceReport:
    t_values: np.ndarray
    asymptotic: np.ndarray
    empirical: np.ndarray | None
    n: int
    h: float
    n_sims: int
    n_dropped: int = 0

    def to_csv(self) -> str:
        rows = ["t,empirical,asymptotic"]
        emp = self.empirical if self.empirical is not None else [np.nan] * len(self.t_values)
        rows += [f"{t:.10g},{e:.12g},{a:.12g}" for t, e, a in zip(self.t_values, emp, self.asymptotic)]
        return "\n".join(rows) + "\n"

    def metadata(self) -> dict:
        return {"n": self.n, "h": self.h, "n_sims": self.n_sims, "n_dropped": self.n_dropped}


def model_cdf(config: SimulationConfig):
    def G(x):
        return truncated_weibull_cdf(config.weibull, config.M1, x)

    return G


def asymptotic_variances(
    config: SimulationConfig, t_values, h: float, delta: float = 0.05, s_range: str = "grid"
) -> np.ndarray:
    G = model_cdf(config)
    return np.array(
        [
            asymptotic_variance(solve_phi(G, t, h, config.M, config.M1, delta), config.n, s_range)
            for t in t_values
        ]
    )


def _variance_replicate(r, config, seed, t_values, h):
    sample = simulate_continuous(config, rng=simulation_stream(seed, r))
    fit = fit_sample(sample)
    if not fit.converged:
        return None
    return density_values(fit.distribution.trimmed(), h, t_values)


def simulated_density_estimates(config, t_values, h, n_sims, seed, n_jobs=1):
    """Density estimates at ``t_values`` for ``n_sims`` independent simulated samples."""
    t_values = np.asarray(t_values, dtype=float)
    out = run_replicates(_variance_replicate, (config, seed, t_values, h), n_sims, n_jobs)
    kept = [o for o in out if o is not None]
    return (np.array(kept) if kept else np.empty((0, t_values.size))), n_sims - len(kept)


def empirical_variance(
    config: SimulationConfig,
    t_values,
    h: float = 3.4,
    n_sims: int = 1000,
    seed: int = 0,
    delta: float = 0.05,
    n_jobs: int = 1,
    with_asymptotic: bool = True,
) -> VarianceReport:
    """Simulation variance of ``n^{2/7}`` times the density estimate, next to its prediction.

    Each of ``n_sims`` samples is drawn from the continuous model, its NPMLE
    fitted and the density estimate evaluated at ``t_values``.  Replicates
    whose fit does not converge are dropped and counted.
    """
    if n_sims < 2:
        raise ValueError("variance needs at least two simulated samples")
    t_values = np.asarray(t_values, dtype=float)
    est, dropped = simulated_density_estimates(config, t_values, h, n_sims, seed, n_jobs)
    if est.shape[0] < 2:
        raise RuntimeError("fewer than two simulated fits converged")
    empirical = config.n ** (4.0 / 7.0) * est.var(axis=0, ddof=1)
    asym = asymptotic_variances(config, t_values, h, delta) if with_asymptotic else np.full(t_values.size, np.nan)
    return VarianceReport(t_values, asym, empirical, config.n, float(h), n_sims, dropped)
