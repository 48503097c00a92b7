"""Triweight kernel and the kernel-smoothed NPMLE (SMLE and density estimate)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .npmle import DiscreteDistribution

TRIWEIGHT = "triweight"
CDF = "cdf"
DENSITY = "density"

_C = 35.0 / 32.0


def kernel(u):
    """Triweight kernel ``35/32 (1 - u^2)^3`` on ``[-1, 1]``."""
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1, _C * (1 - u * u) ** 3, 0.0)


def kernel_integral(x):
    """``int_{-inf}^x K(u) du`` in closed form."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    return 0.5 + _C * (x - x**3 + 0.6 * x**5 - x**7 / 7.0)


def kernel_derivative(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1, -6.0 * _C * u * (1 - u * u) ** 2, 0.0)


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float
    family: str = TRIWEIGHT

    def __post_init__(self):
        if self.family != TRIWEIGHT:
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


def default_grid(lo: float = 0.0, hi: float = 14.0, step: float = 0.1) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


@dataclass(frozen=True)
class SmoothEstimate:
    eval_grid: np.ndarray
    values: np.ndarray
    kind: str
    bandwidth: float
    source: str

    def to_csv(self) -> str:
        rows = [f"t,{self.kind}"]
        rows += [f"{t:.10g},{v:.12g}" for t, v in zip(self.eval_grid, self.values)]
        return "\n".join(rows) + "\n"

    def metadata(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth, "source": self.source}

    def to_json(self) -> str:
        return json.dumps(
            {**self.metadata(), "t": self.eval_grid.tolist(), "values": self.values.tolist()}
        )


def _check_h(h):
    KernelSpec(float(h))


def _scaled(dist: DiscreteDistribution, h: float, grid):
    t = np.asarray(grid, dtype=float)
    return (t[:, None] - dist.support[None, :]) / h, t


def smle_values(dist: DiscreteDistribution, h: float, grid) -> np.ndarray:
    u, _ = _scaled(dist, h, grid)
    return kernel_integral(u) @ dist.masses


def density_values(dist: DiscreteDistribution, h: float, grid) -> np.ndarray:
    u, _ = _scaled(dist, h, grid)
    return kernel(u) @ dist.masses / h


def smle(dist: DiscreteDistribution, h: float, grid=None) -> SmoothEstimate:
    """Smoothed MLE of the distribution function, ``sum_j p_j IK((t - y_j)/h)``."""
    _check_h(h)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    values = np.clip(smle_values(dist, h, grid), 0.0, 1.0)
    return SmoothEstimate(grid, values, CDF, float(h), dist.digest())


def density(dist: DiscreteDistribution, h: float, grid=None) -> SmoothEstimate:
    """Kernel density estimate ``h^{-1} sum_j p_j K((t - y_j)/h)``.

    No boundary correction is applied, so for a support point closer to 0
    than ``h`` part of its kernel mass falls on negative times.
    """
    _check_h(h)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    return SmoothEstimate(grid, density_values(dist, h, grid), DENSITY, float(h), dist.digest())


@dataclass(frozen=True)
class KernelDensity:
    """The density estimate as a callable, used as a sampling reference."""

    dist: DiscreteDistribution
    h: float

    def __post_init__(self):
        _check_h(self.h)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return density_values(self.dist, self.h, t.reshape(-1)).reshape(t.shape)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return smle_values(self.dist, self.h, t.reshape(-1)).reshape(t.shape)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.dist.support[0] - self.h), float(self.dist.support[-1] + self.h)
