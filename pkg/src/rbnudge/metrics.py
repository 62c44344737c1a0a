"""Skill scores comparing downscaled solutions against the reference.

Score definitions, with Z a flattened field of N points, Z_t the reference,
and k indexing the N_e ensemble members:

    AE          sum_i | Z_i - Z_t,i | / N              (mean absolute error)
    RMSE        || Z - Z_t ||_2 / sqrt(N)
    RRMSE       || Z - Z_t ||_2 / || Z_t ||_2
    AES         sqrt( sum_k sum_i (Z_k,i - Zbar_i)^2 / (N_e - 1) )
    expected_l2 mean_k sum_i (Z_k,i - Z_t,i)^2 * h_x * h_y

AES measures ensemble spread around the pointwise ensemble mean; dividing it
by sqrt(N_e) estimates the spread of the ensemble-mean itself.  expected_l2
is the Monte Carlo estimate of the expected squared L2 distance between the
downscaled solution and the reference (cell-area weighted); it is the
quantity whose scaling against noise level and observation spacing
characterizes downscaling quality.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, UndefinedMetricError
from .grid import FieldSet, ScalarField

SCORES = ("AE", "RMSE", "RRMSE", "AES", "expected_l2")
ENSEMBLE_SCORES = ("AES", "expected_l2")
VARIABLES = ("u", "v", "theta")


def _check_pair(a: ScalarField, b: ScalarField):
    if a.grid != b.grid or a.location != b.location:
        raise ConfigurationError(
            "fields must share grid and staggering to be compared")


def ae(a: ScalarField, b: ScalarField) -> float:
    """Absolute error: mean of the pointwise absolute difference."""
    _check_pair(a, b)
    return float(np.mean(np.abs(a.values - b.values)))


def rmse(a: ScalarField, b: ScalarField) -> float:
    _check_pair(a, b)
    diff = a.values - b.values
    return float(np.sqrt(np.mean(diff * diff)))


def rrmse(a: ScalarField, truth: ScalarField) -> float:
    """Relative error: ratio of 2-norms against the reference."""
    _check_pair(a, truth)
    denom = float(np.linalg.norm(truth.values.ravel()))
    if denom == 0.0:
        raise UndefinedMetricError(
            "relative error undefined against a zero-norm reference")
    return float(np.linalg.norm((a.values - truth.values).ravel())) / denom


def _stack_members(members: Sequence[ScalarField],
                   minimum: int = 2) -> np.ndarray:
    if len(members) < minimum:
        raise ConfigurationError(
            f"need at least {minimum} members, got {len(members)}")
    first = members[0]
    for m in members[1:]:
        _check_pair(first, m)
    return np.stack([m.values for m in members])


def aes(members: Sequence[ScalarField]) -> float:
    """Average ensemble spread around the pointwise ensemble mean."""
    stack = _stack_members(members)
    dev = stack - stack.mean(axis=0)
    return float(np.sqrt((dev * dev).sum() / (len(members) - 1)))


def mean_estimator_spread(members: Sequence[ScalarField]) -> float:
    """Spread of the ensemble-mean estimator, AES / sqrt(N_e).

    Shrinks like 1/sqrt(N_e) when members are independent with a common
    spread, which is the diagnostic use."""
    return aes(members) / np.sqrt(len(members))


def expected_l2_error(members: Sequence[ScalarField],
                      truth: ScalarField) -> float:
    """Ensemble mean of the cell-area weighted squared error integral."""
    stack = _stack_members(members, minimum=1)
    _check_pair(members[0], truth)
    diff = stack - truth.values[None, :, :]
    return float((diff * diff).sum() / len(members)
                 * truth.grid.cell_area)


@dataclass(frozen=True)
class SkillSeries:
    """One score of one variable sampled along a run.

    member is a free label ("0", "1", ... for individual members); ensemble
    scores must carry an ensemble-level label rather than a member index.
    """

    score: str
    variable: str
    member: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.score not in SCORES:
            raise ConfigurationError(f"unknown score {self.score!r}")
        if self.variable not in VARIABLES:
            raise ConfigurationError(f"unknown variable {self.variable!r}")
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or times.shape != values.shape:
            raise ConfigurationError("times and values must be 1-D and "
                                     "equally long")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ConfigurationError("times must increase strictly")
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("skill values must be finite")
        if np.any(values < 0):
            raise ConfigurationError("skill values must be >= 0")
        if self.score in ENSEMBLE_SCORES and self.member.isdigit():
            raise ConfigurationError(
                f"{self.score} is ensemble-level; member label "
                f"{self.member!r} looks like a single member index")


class SkillRecorder:
    """advance() hook recording AE / RMSE / RRMSE against reference states.

    truth_lookup(step_count) returns the reference FieldSet at that step or
    None when no reference sample exists there; scores are recorded only at
    steps with a reference.
    """

    def __init__(self, truth_lookup: Callable[[int], FieldSet | None],
                 member: str):
        self.truth_lookup = truth_lookup
        self.member = member
        self.times: list[float] = []
        self._data: dict[tuple[str, str], list[float]] = {
            (score, var): [] for score in ("AE", "RMSE", "RRMSE")
            for var in VARIABLES}

    def __call__(self, step_count: int, fs: FieldSet):
        truth = self.truth_lookup(step_count)
        if truth is None:
            return
        if abs(truth.time - fs.time) > 1e-9 * max(1.0, abs(fs.time)):
            raise ConfigurationError(
                f"reference time {truth.time} does not match run time "
                f"{fs.time}")
        self.times.append(fs.time)
        for var in VARIABLES:
            a = getattr(fs, var)
            b = getattr(truth, var)
            self._data[("AE", var)].append(ae(a, b))
            self._data[("RMSE", var)].append(rmse(a, b))
            self._data[("RRMSE", var)].append(rrmse(a, b))

    def to_series(self) -> list[SkillSeries]:
        out = []
        times = np.asarray(self.times)
        for (score, var), vals in sorted(self._data.items()):
            out.append(SkillSeries(score=score, variable=var,
                                   member=self.member, times=times,
                                   values=np.asarray(vals)))
        return out


_CSV_COLUMNS = ("time", "value", "score", "variable", "member", "run_id")


def write_skill_series_csv(path, series: Sequence[SkillSeries],
                           run_id: str) -> None:
    """Write series as flat CSV rows; floats keep full precision (%.17g)."""
    ordered = sorted(series, key=lambda s: (s.member, s.score, s.variable))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for s in ordered:
            for t, v in zip(s.times, s.values):
                writer.writerow(["%.17g" % t, "%.17g" % v, s.score,
                                 s.variable, s.member, run_id])


def read_skill_series_csv(path) -> list[SkillSeries]:
    """Rebuild SkillSeries objects from a CSV written by the writer above."""
    groups: dict[tuple[str, str, str], list[tuple[float, float]]] = {}
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != _CSV_COLUMNS:
            raise ConfigurationError(f"{path} has unexpected columns "
                                     f"{header}")
        for row in reader:
            time, value, score, variable, member, _run = row
            groups.setdefault((member, score, variable), []).append(
                (float(time), float(value)))
    out = []
    for (member, score, variable), pairs in sorted(groups.items()):
        times = np.array([p[0] for p in pairs])
        values = np.array([p[1] for p in pairs])
        out.append(SkillSeries(score=score, variable=variable, member=member,
                               times=times, values=values))
    return out
