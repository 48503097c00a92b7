"""Observation records, text parsers and the interval-censoring reduction.

An observation is a traveler's exit time ``E`` from the exposure window
``[0, E]`` and the time ``S`` of becoming symptomatic.  The incubation time
then lies in the censoring interval ``(max(S - E, 0), S]``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Iterator

import numpy as np

DISCRETE_DAYS = "discrete_days"
CONTINUOUS = "continuous"
SCALES = (DISCRETE_DAYS, CONTINUOUS)

UNKNOWN_ARRIVAL = -18


class ParseError(ValueError):
    """Malformed input text (wrong number of columns, non-numeric field)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """Input parses but violates the observation model."""


@dataclass(frozen=True)
class Observation:
    exit_time: float
    symptom_time: float
    delta: int | None = None

    def __post_init__(self):
        if not self.symptom_time > 0:
            raise ValidationError(f"symptom time must be positive, got {self.symptom_time}")
        if not self.exit_time > 0:
            # E = 0 leaves the empty censoring interval (S, S]
            raise ValidationError(f"exit time must be positive, got {self.exit_time}")
        expected = int(self.symptom_time <= self.exit_time)
        if self.delta is None:
            object.__setattr__(self, "delta", expected)
        elif int(self.delta) != expected:
            raise ValidationError(
                f"delta={self.delta} inconsistent with E={self.exit_time}, S={self.symptom_time}"
            )

    @property
    def interval(self) -> tuple[float, float]:
        """Censoring interval ``(left, right]`` for the incubation time."""
        return max(self.symptom_time - self.exit_time, 0), self.symptom_time


class ObservationSet:
    """An immutable sample of observations, stored column-wise.

    Args:
        exits: exit times ``E_i``.
        symptoms: symptom-onset times ``S_i``.
        scale: ``"discrete_days"`` (all times integer) or ``"continuous"``.
    """

    def __init__(self, exits, symptoms, scale: str = DISCRETE_DAYS):
        exits = np.array(exits, dtype=float).reshape(-1)
        symptoms = np.array(symptoms, dtype=float).reshape(-1)
        if exits.shape != symptoms.shape:
            raise ValidationError("exits and symptoms differ in length")
        if exits.size == 0:
            raise ValidationError("empty observation set")
        if scale not in SCALES:
            raise ValidationError(f"unknown scale {scale!r}")
        if not np.all(np.isfinite(exits)) or not np.all(np.isfinite(symptoms)):
            raise ValidationError("times must be finite")
        if np.any(symptoms <= 0):
            raise ValidationError("symptom times must be positive")
        if np.any(exits <= 0):
            raise ValidationError("exit times must be positive (E = 0 gives an empty interval)")
        if scale == DISCRETE_DAYS and (
            np.any(exits != np.round(exits)) or np.any(symptoms != np.round(symptoms))
        ):
            raise ValidationError("discrete_days scale requires integer times")
        exits.setflags(write=False)
        symptoms.setflags(write=False)
        self._exits = exits
        self._symptoms = symptoms
        self.scale = scale

    @classmethod
    def from_records(cls, records: Iterable[Observation], scale: str = DISCRETE_DAYS):
        records = list(records)
        return cls([r.exit_time for r in records], [r.symptom_time for r in records], scale)

    @property
    def exits(self) -> np.ndarray:
        return self._exits

    @property
    def symptoms(self) -> np.ndarray:
        return self._symptoms

    @property
    def deltas(self) -> np.ndarray:
        return (self._symptoms <= self._exits).astype(int)

    @property
    def lefts(self) -> np.ndarray:
        return np.maximum(self._symptoms - self._exits, 0.0)

    @property
    def records(self) -> tuple[Observation, ...]:
        return tuple(self)

    def __len__(self) -> int:
        return self._exits.size

    def __iter__(self) -> Iterator[Observation]:
        for e, s in zip(self._exits, self._symptoms):
            yield Observation(float(e), float(s))

    def __getitem__(self, index) -> Observation | "ObservationSet":
        if isinstance(index, (int, np.integer)):
            return Observation(float(self._exits[index]), float(self._symptoms[index]))
        return ObservationSet(self._exits[index], self._symptoms[index], self.scale)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservationSet):
            return NotImplemented
        return (
            self.scale == other.scale
            and np.array_equal(self._exits, other._exits)
            and np.array_equal(self._symptoms, other._symptoms)
        )

    def __repr__(self) -> str:
        return f"ObservationSet(n={len(self)}, scale={self.scale!r})"


def _rows(text, ncols: int) -> Iterator[tuple[int, list[float]]]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != ncols:
            raise ParseError(f"expected {ncols} columns, got {len(fields)}", lineno)
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", lineno) from None
        if not all(np.isfinite(values)):
            raise ParseError(f"non-finite field in {line!r}", lineno)
        yield lineno, values


def _infer_scale(*columns) -> str:
    values = np.concatenate([np.asarray(c, dtype=float) for c in columns])
    return DISCRETE_DAYS if np.all(values == np.round(values)) else CONTINUOUS


def parse_raw_records(text) -> ObservationSet:
    """Parse three-column (arrival, departure, symptom onset) calendar records.

    Each record is shifted so that the arrival becomes day 0.  Unknown
    arrivals are conventionally encoded as -18 and get no special treatment.
    If symptoms started before departure, the exit time is set to the
    symptom time.
    """
    exits, symptoms = [], []
    for lineno, (arrival, departure, onset) in _rows(text, 3):
        if departure < arrival:
            raise ValidationError(f"line {lineno}: departure {departure} before arrival {arrival}")
        e = departure - arrival
        s = onset - arrival
        if s <= 0:
            raise ValidationError(f"line {lineno}: symptom onset not after arrival")
        exits.append(s if s <= e else e)
        symptoms.append(s)
    if not exits:
        raise ParseError("no records")
    return ObservationSet(exits, symptoms, DISCRETE_DAYS)


def parse_observations(text, scale: str | None = None) -> ObservationSet:
    """Parse two-column ``(S - E, S)`` rows; ``S - E`` is 0 when symptomatic before exit."""
    lefts, symptoms = [], []
    for lineno, (left, s) in _rows(text, 2):
        if left < 0:
            raise ValidationError(f"line {lineno}: negative interval start S-E={left}")
        if s <= left:
            raise ValidationError(f"line {lineno}: S={s} not larger than S-E={left}")
        lefts.append(left)
        symptoms.append(s)
    if not symptoms:
        raise ParseError("no records")
    lefts = np.array(lefts)
    symptoms = np.array(symptoms)
    if scale is None:
        scale = _infer_scale(lefts, symptoms)
    return ObservationSet(symptoms - lefts, symptoms, scale)


def parse_triples(text, scale: str | None = None) -> ObservationSet:
    """Parse ``(E, S, delta)`` rows, as written by :func:`format_triples`."""
    exits, symptoms = [], []
    for lineno, (e, s, d) in _rows(text, 3):
        try:
            Observation(e, s, int(d))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        exits.append(e)
        symptoms.append(s)
    if not exits:
        raise ParseError("no records")
    if scale is None:
        scale = _infer_scale(exits, symptoms)
    return ObservationSet(exits, symptoms, scale)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def format_observations(sample: ObservationSet) -> str:
    """Two-column text; inverse of :func:`parse_observations` when ``E = S`` for ``delta = 1``."""
    lines = [f"{_fmt(left)} {_fmt(s)}" for left, s in zip(sample.lefts, sample.symptoms)]
    return "\n".join(lines) + "\n"


def format_triples(sample: ObservationSet) -> str:
    lines = [
        f"{_fmt(e)} {_fmt(s)} {d}"
        for e, s, d in zip(sample.exits, sample.symptoms, sample.deltas)
    ]
    return "\n".join(lines) + "\n"


def read_sample(path) -> ObservationSet:
    """Read a two-column or three-column (E, S, delta) file, guessing from the first row."""
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            ncols = len(line.split())
            break
    else:
        raise ParseError("no records")
    if ncols == 2:
        return parse_observations(text)
    if ncols == 3:
        return parse_triples(text)
    raise ParseError(f"expected 2 or 3 columns, got {ncols}", 1)


def load_wuhan() -> ObservationSet:
    """The 88 Wuhan travelers, exit and onset times shifted to entrance day 0."""
    text = resources.files("incubation.datasets").joinpath("wuhan.txt").read_text()
    return parse_observations(text, DISCRETE_DAYS)


@dataclass(frozen=True)
class ReducedProblem:
    """Counting structure of an interval-censored sample after the preliminary reduction.

    ``grid`` holds the interior points ``x_1 < ... < x_m`` at which the CDF is
    free.  Index 0 stands for every endpoint below ``grid[0]`` (CDF forced to 0)
    and index ``m + 1`` for every endpoint at or above ``upper`` (CDF forced to
    1).  ``cells`` lists the distinct informative index pairs ``(i, j)`` with
    their multiplicities; observations mapping to ``(0, m + 1)`` add
    ``log 1 = 0`` to the likelihood and are only counted in ``n_uninformative``.
    """

    grid: np.ndarray
    upper: float
    cell_i: np.ndarray
    cell_j: np.ndarray
    cell_n: np.ndarray
    obs_index: np.ndarray
    lefts: np.ndarray
    rights: np.ndarray
    n_uninformative: int
    scale: str = DISCRETE_DAYS

    @property
    def m(self) -> int:
        return self.grid.size

    @property
    def n(self) -> int:
        return self.obs_index.shape[0]

    @property
    def support(self) -> np.ndarray:
        """Interior grid plus the forced-one edge, where residual mass is reported."""
        return np.append(self.grid, self.upper)

    def count_matrix(self) -> np.ndarray:
        """Dense ``(m + 2) x (m + 2)`` array of informative counts ``N_ij``."""
        out = np.zeros((self.m + 2, self.m + 2), dtype=int)
        np.add.at(out, (self.cell_i, self.cell_j), self.cell_n)
        return out

    def triangular(self) -> list[list[int]]:
        """Rows ``i = 0..m`` of ``N_ij`` for ``j = i+1..m+1``, as printed in the literature."""
        full = self.count_matrix()
        return [full[i, i + 1:].tolist() for i in range(self.m + 1)]

    def to_json(self) -> str:
        counts = [[int(i), int(j), int(c)] for i, j, c in zip(self.cell_i, self.cell_j, self.cell_n)]
        return json.dumps(
            {
                "grid": self.grid.tolist(),
                "upper": float(self.upper),
                "counts": counts,
                "n_uninformative": self.n_uninformative,
                "n": self.n,
                "scale": self.scale,
            }
        )


def reduce(sample: ObservationSet) -> ReducedProblem:
    """Reduce a sample to the grid of free CDF values and the count array ``N_ij``.

    Mass below the smallest right endpoint can be moved up to it, and mass
    above the largest left endpoint can be moved down to the first right
    endpoint exceeding it, without lowering any likelihood term.  So the
    CDF is 0 before ``lower = min U`` and 1 from ``upper = min{U : U > max T}``
    on, and the free parameters are the CDF values at the distinct endpoints
    in ``[lower, upper)``.
    """
    lefts = sample.lefts
    rights = sample.symptoms
    lower = rights.min()
    upper = rights[rights > lefts.max()].min()
    endpoints = np.unique(np.concatenate([lefts, rights]))
    grid = endpoints[(endpoints >= lower) & (endpoints < upper)]
    m = grid.size

    def index(x):
        k = np.searchsorted(grid, x) + 1
        k = np.where(x < lower, 0, k)
        return np.where(x >= upper, m + 1, k)

    ii = index(lefts)
    jj = index(rights)
    obs_index = np.column_stack([ii, jj])
    informative = ~((ii == 0) & (jj == m + 1))
    flat = ii[informative] * (m + 2) + jj[informative]
    keys, counts = np.unique(flat, return_counts=True)
    for arr in (grid, obs_index, lefts, rights):
        arr.setflags(write=False)
    return ReducedProblem(
        grid=grid,
        upper=float(upper),
        cell_i=keys // (m + 2),
        cell_j=keys % (m + 2),
        cell_n=counts,
        obs_index=obs_index,
        lefts=lefts,
        rights=rights,
        n_uninformative=int((~informative).sum()),
        scale=sample.scale,
    )
