"""Clipped Bellman operator, target-clipping rules, and clipped value iteration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from valbound.bounds import SOFT, _field, bounds_from_delta, delta_standard
from valbound.mdp import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    ConvergenceError,
    SolveReport,
    bellman_backup,
    hard_state_value,
    soft_state_value,
)

METHODS = ("none", "hard", "soft", "smoothed")
DEFAULT_ETA = 1e-5

TRACE_COLUMNS = ("iteration", "residual", "inf_delta", "sup_delta", "mean_q", "violation_sum")


class _NoBounds:
    """Marker for "no bound": clipping is skipped entirely."""

    def __repr__(self):
        return "NO_BOUNDS"


NO_BOUNDS = _NoBounds()


def clip_hard(target, lower, upper):
    """``min(max(target, lower), upper)``; refuses ``lower > upper``."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    out = np.minimum(np.maximum(target, lower), upper)
    return float(out) if np.ndim(out) == 0 else out


def clip_loss(q_value, q_clipped):
    out = np.abs(np.asarray(q_value, dtype=np.float64) - q_clipped)
    return float(out) if np.ndim(out) == 0 else out


def smoothed_target(raw, clipped, violation):
    """Blend ``(1 - w) raw + w clipped`` with ``w = violation / (1 + violation)``.

    Zero violation returns ``raw`` unchanged.
    """
    raw = np.asarray(raw, dtype=np.float64)
    violation = np.asarray(violation, dtype=np.float64)
    if np.any(violation < 0):
        raise ValueError("violation must be nonnegative")
    w = violation / (1.0 + violation)
    out = np.where(violation == 0.0, raw, (1.0 - w) * raw + w * clipped)
    return float(out) if np.ndim(out) == 0 else out


def apply_clip(raw, lower, upper, method, eta=DEFAULT_ETA):
    """Apply a tabular clip rule to a block of raw backups.

    Returns ``(new_values, violation)`` where ``violation = |raw - clip(raw)|``.
    The ``"soft"`` rule pulls each entry a fraction ``eta`` of the way toward
    its clipped value, the tabular stand-in for the clipping loss term.
    """
    if method not in METHODS:
        raise ValueError(f"unknown clip method {method!r}")
    clipped = clip_hard(raw, lower, upper)
    violation = np.abs(raw - clipped)
    if method == "none":
        return raw, violation
    if method == "hard":
        return clipped, violation
    if method == "soft":
        return raw - eta * (raw - clipped), violation
    return smoothed_target(raw, clipped, violation), violation


def clipped_backup(mdp, reg, q, bounds):
    """``max(min(B Q, U), L)``; ``bounds=NO_BOUNDS`` returns the plain backup."""
    bq = bellman_backup(mdp, reg, q)
    if bounds is NO_BOUNDS:
        return bq
    if np.any(bounds.lower > bounds.upper):
        raise ValueError("invalid bounds: lower exceeds upper")
    return clip_hard(bq, bounds.lower, bounds.upper)


@dataclass(frozen=True)
class ClipConfig:
    method: str = "hard"
    eta: float = DEFAULT_ETA

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown clip method {self.method!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")


@dataclass
class ClipTrace:
    iteration: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    inf_delta: list = field(default_factory=list)
    sup_delta: list = field(default_factory=list)
    mean_q: list = field(default_factory=list)
    violation_sum: list = field(default_factory=list)
    violation_count: list = field(default_factory=list)

    def __len__(self):
        return len(self.iteration)

    def append(self, iteration, residual, inf_delta, sup_delta, mean_q, violation_sum, violation_count):
        self.iteration.append(int(iteration))
        self.residual.append(float(residual))
        self.inf_delta.append(float(inf_delta))
        self.sup_delta.append(float(sup_delta))
        self.mean_q.append(float(mean_q))
        self.violation_sum.append(float(violation_sum))
        self.violation_count.append(int(violation_count))

    def rows(self):
        return list(
            zip(self.iteration, self.residual, self.inf_delta, self.sup_delta, self.mean_q, self.violation_sum)
        )

    def iterations_to(self, tol):
        """First iteration whose residual is at most ``tol`` (None if never)."""
        for it, res in zip(self.iteration, self.residual):
            if res <= tol:
                return it
        return None


def write_trace_csv(trace, path):
    if len(trace) == 0:
        raise ValueError("empty trace")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for it, *vals in trace.rows():
            w.writerow([it] + [f"{v:.17g}" for v in vals])


def clipped_value_iteration(mdp, reg, config, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Value iteration whose backups are clipped to bounds built from the previous iterate.

    Every iteration computes the residual field of the current table, forms
    the bound pair, applies ``config.method`` to the raw backup, and logs a
    trace row. Returns ``(SolveReport, ClipTrace)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if config.method != "none" and mdp.discount >= 1.0:
        raise ValueError("clipping needs discount < 1")
    q = np.zeros(mdp.shape)
    trace = ClipTrace()
    res = math.inf
    for k in range(1, max_iter + 1):
        raw = bellman_backup(mdp, reg, q)
        if reg.is_standard:
            v = hard_state_value(q)
            fld = delta_standard(mdp, v)
        else:
            v = soft_state_value(q, reg)
            fld = _field(mdp, raw - q, SOFT)
        if mdp.discount < 1.0:
            bp = bounds_from_delta(mdp, v, fld)
            new, violation = apply_clip(raw, bp.lower, bp.upper, config.method, config.eta)
        else:
            new, violation = raw, np.zeros_like(raw)
        res = float(np.max(np.abs(new - q)))
        trace.append(k, res, fld.inf_delta, fld.sup_delta, new.mean(), violation.sum(), np.count_nonzero(violation))
        q = new
        if not np.isfinite(res):
            raise ConvergenceError("clipped value iteration diverged", k, res)
        if res <= tol:
            return SolveReport(q=q, iterations=k, residual=res), trace
    raise ConvergenceError(f"no convergence after {max_iter} iterations (residual {res:.3e})", max_iter, res)
