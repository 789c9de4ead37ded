"""Value composition: exact log-sum-exp composition, composition with a
corrective task in standard RL, shaping transfer, and inverse rewards.

Subtasks that differ only in the rewards of their absorbing states compose
exactly under the weighted log-sum-exp rule in entropy-regularized RL with
deterministic dynamics. For any other rule (or for standard RL) the
composed values are a potential, and the optimal values of the composite
task are that potential plus the solution of a corrective task whose reward
is the shaped residual ``kappa``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from valbound.mdp import (
    DEFAULT_MAX_ITER,
    RegularizationSpec,
    TabularMdp,
    bellman_backup,
    hard_state_value,
    solve,
    state_value,
)

RULES = ("logsumexp_weighted", "max", "mean", "identity")

# tolerance used when solving subtasks and corrective tasks
SOLVE_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class CompositionSpec:
    """Weights, temperature and rule for composing M subtasks.

    ``rule`` is one of ``RULES`` or a pure function mapping a stacked array
    of shape ``(M, ...)`` to shape ``(...)`` elementwise. ``"mean"`` is the
    weight-normalized average; ``"identity"`` needs a single subtask.
    """

    weights: tuple
    temperature: float = 1.0
    rule: object = "logsumexp_weighted"

    def __post_init__(self):
        w = tuple(float(x) for x in np.atleast_1d(self.weights))
        if not w:
            raise ValueError("at least one weight is required")
        if any(not (x > 0 and math.isfinite(x)) for x in w):
            raise ValueError(f"weights must be positive and finite, got {w}")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError("temperature must be positive")
        if not callable(self.rule) and self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "temperature", float(self.temperature))

    @classmethod
    def uniform(cls, num_tasks, temperature=1.0, rule="logsumexp_weighted"):
        return cls((1.0,) * num_tasks, temperature, rule)


@dataclass(frozen=True, eq=False)
class ShapingArtifacts:
    kappa: np.ndarray
    potential: np.ndarray
    corrective_value: np.ndarray
    reconstructed: np.ndarray


@dataclass(frozen=True)
class CompositionReport:
    residual: float
    tol: float
    passed: bool
    weights: tuple
    tau: float

    def to_dict(self):
        return {
            "residual": self.residual,
            "tol": self.tol,
            "pass": self.passed,
            "weights": list(self.weights),
            "tau": self.tau,
        }


def _stack(tables, spec):
    if len(tables) == 0:
        raise ValueError("nothing to compose")
    arr = np.stack([np.asarray(t, dtype=np.float64) for t in tables])
    if len(spec.weights) != arr.shape[0]:
        raise ValueError(f"{arr.shape[0]} tables but {len(spec.weights)} weights")
    return arr


def _weighted_logsumexp(arr, weights, tau):
    w = np.asarray(weights).reshape((-1,) + (1,) * (arr.ndim - 1))
    x = arr / tau + np.log(w)
    m = x.max(axis=0)
    return tau * (m + np.log(np.exp(x - m).sum(axis=0)))


def compose(tables, spec):
    """Combine M same-shaped tables entrywise with ``spec.rule``."""
    arr = _stack(tables, spec)
    rule = spec.rule
    if callable(rule):
        out = np.asarray(rule(arr), dtype=np.float64)
        if out.shape != arr.shape[1:]:
            raise ValueError(f"rule returned shape {out.shape}, expected {arr.shape[1:]}")
        return out
    if rule == "logsumexp_weighted":
        return _weighted_logsumexp(arr, spec.weights, spec.temperature)
    if rule == "max":
        return arr.max(axis=0)
    if rule == "mean":
        w = np.asarray(spec.weights)
        return np.tensordot(w / w.sum(), arr, axes=1)
    if arr.shape[0] != 1:
        raise ValueError("identity rule takes exactly one table")
    return arr[0].copy()


def compose_q_logsumexp(q_tables, spec):
    """``tau log sum_j w_j exp(Q_j / tau)`` per entry, overflow-safe."""
    arr = _stack(q_tables, spec)
    if spec.rule != "logsumexp_weighted":
        raise ValueError("compose_q_logsumexp needs the logsumexp_weighted rule")
    return _weighted_logsumexp(arr, spec.weights, spec.temperature)


def compose_rewards_logsumexp(reward_rows, spec):
    """Composite absorbing-state rewards ``tau log sum_j w_j exp(r_j / tau)``."""
    arr = _stack(reward_rows, spec)
    return _weighted_logsumexp(arr, spec.weights, spec.temperature)


def build_composite_task(subtask_mdps, spec):
    """Composite of subtasks that differ only in their absorbing-state rewards.

    Interior rewards are copied; absorbing rewards are combined with
    ``spec.rule``. All subtasks must share deterministic dynamics, an
    undiscounted objective, the absorbing set and the interior rewards.
    """
    if not subtask_mdps:
        raise ValueError("no subtasks given")
    if len(subtask_mdps) != len(spec.weights):
        raise ValueError(f"{len(subtask_mdps)} subtasks but {len(spec.weights)} weights")
    base = subtask_mdps[0]
    if not base.absorbing:
        raise ValueError("absorbing: subtasks need a nonempty absorbing set")
    if base.discount != 1.0:
        raise ValueError(f"discount: exact composition is undiscounted, got {base.discount}")
    if not base.is_deterministic():
        raise ValueError("transition: exact composition needs deterministic dynamics")
    interior = np.ones(base.num_states, dtype=bool)
    interior[sorted(base.absorbing)] = False
    for j, m in enumerate(subtask_mdps[1:], start=1):
        if m.shape != base.shape:
            raise ValueError(f"shape: subtask {j} has shape {m.shape}, expected {base.shape}")
        if m.discount != base.discount:
            raise ValueError(f"discount: subtask {j} differs")
        if m.absorbing != base.absorbing:
            raise ValueError(f"absorbing: subtask {j} has a different absorbing set")
        if not np.array_equal(m.transition, base.transition):
            raise ValueError(f"transition: subtask {j} has different dynamics")
        if not np.array_equal(m.reward[interior], base.reward[interior]):
            raise ValueError(f"reward: subtask {j} differs on interior states")
    idx = sorted(base.absorbing)
    r = base.reward.copy()
    r[idx] = compose([m.reward[idx] for m in subtask_mdps], spec)
    return TabularMdp(base.transition, r, 1.0, base.absorbing)


def verify_exact_composition(subtask_mdps, spec, tol=1e-8, prior=None):
    """Solve each subtask at ``beta = 1/tau``, compose, and measure the
    composite soft Bellman residual on interior states."""
    composite = build_composite_task(subtask_mdps, spec)
    S, A = composite.shape
    beta = 1.0 / spec.temperature
    reg = RegularizationSpec(beta, prior) if prior is not None else RegularizationSpec.uniform(beta, S, A)
    qs = [solve(m, reg, tol=SOLVE_TOL).q for m in subtask_mdps]
    q_comp = compose(qs, spec)
    resid = np.abs(bellman_backup(composite, reg, q_comp) - q_comp)
    interior = np.ones(S, dtype=bool)
    interior[sorted(composite.absorbing)] = False
    residual = float(resid[interior].max()) if interior.any() else 0.0
    return CompositionReport(residual, float(tol), residual <= tol, spec.weights, spec.temperature)


def _corrective(mdp, kappa, potential, tol, max_iter):
    standard = RegularizationSpec.standard(*mdp.shape)
    k_star = solve(mdp.with_reward(kappa), standard, tol=tol, max_iter=max_iter).q
    return ShapingArtifacts(
        kappa=kappa,
        potential=potential,
        corrective_value=k_star,
        reconstructed=potential[:, None] + k_star,
    )


def shaping_kappa(target_mdp, v_star, tol=SOLVE_TOL, max_iter=DEFAULT_MAX_ITER):
    """Shaped reward ``kappa = r + gamma E V(s') - V(s)`` and the corrective solution.

    ``reconstructed = V + K*`` is the optimal Q of ``target_mdp`` for any
    potential ``V``.
    """
    if target_mdp.discount >= 1.0:
        raise ValueError("shaping transfer needs discount < 1")
    v = np.asarray(v_star, dtype=np.float64)
    if v.shape != (target_mdp.num_states,):
        raise ValueError(f"potential shape {v.shape} does not match ({target_mdp.num_states},)")
    kappa = target_mdp.reward + target_mdp.discount * target_mdp.expected_next(v) - v[:, None]
    return _corrective(target_mdp, kappa, v, tol, max_iter)


def std_composition_correction(subtask_mdps, q_tables, spec, tol=SOLVE_TOL, max_iter=DEFAULT_MAX_ITER):
    """Standard-RL composition: potential ``V_f = max_a f(Q_j)`` plus the
    corrective task on the composite reward ``f(r_j)``.

    ``q_tables=None`` solves the subtasks first.
    """
    if not subtask_mdps:
        raise ValueError("no subtasks given")
    base = subtask_mdps[0]
    for j, m in enumerate(subtask_mdps[1:], start=1):
        if m.shape != base.shape or not np.array_equal(m.transition, base.transition):
            raise ValueError(f"transition: subtask {j} has different dynamics")
        if m.discount != base.discount or m.absorbing != base.absorbing:
            raise ValueError(f"discount/absorbing: subtask {j} differs")
    if q_tables is None:
        standard = RegularizationSpec.standard(*base.shape)
        q_tables = [solve(m, standard, tol=tol, max_iter=max_iter).q for m in subtask_mdps]
    composite = base.with_reward(compose([m.reward for m in subtask_mdps], spec))
    v_f = hard_state_value(compose(q_tables, spec))
    return shaping_kappa(composite, v_f, tol=tol, max_iter=max_iter)


def inverse_reward(q, mdp, reg):
    """Reward under which ``q`` is optimal: ``R = Q - gamma E V(s')``.

    ``V`` is the soft value of ``q`` (or ``max_a q`` in standard mode);
    absorbing rows get ``R = Q``. Only the dynamics of ``mdp`` are used.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != mdp.shape:
        raise ValueError(f"Q table shape {q.shape} does not match {mdp.shape}")
    return q - mdp.discount * mdp.expected_next(state_value(q, reg))
