"""Double-sided bounds on the optimal action-value function from an arbitrary estimate.

Given any estimate (a Q table in entropy-regularized RL, a state-value table
in standard RL) the residual field ``delta`` is the reward of a corrective
task whose optimal value is the gap between the estimate and the truth. Its
extremes, scaled by the horizon ``H = 1/(1-gamma)``, bracket ``Q*``.

Absorbing states terminate the corrective task as well, so when the MDP has
any, the extremes are taken over the table together with the zero reward
collected after termination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from valbound.mdp import (
    _check_q,
    bellman_backup,
    hard_state_value,
    soft_state_value,
    state_value,
)

SOFT = "soft"
STANDARD_MODE = "standard"


@dataclass(frozen=True, eq=False)
class DeltaField:
    delta: np.ndarray
    mode: str
    inf_delta: float
    sup_delta: float


@dataclass(frozen=True, eq=False)
class BoundPair:
    lower: np.ndarray
    upper: np.ndarray
    inf_delta: float
    sup_delta: float
    horizon: float

    @property
    def gap(self):
        return self.upper - self.lower

    def contains(self, q, slack=0.0):
        q = np.asarray(q)
        return bool(np.all(q >= self.lower - slack) and np.all(q <= self.upper + slack))


@dataclass(frozen=True)
class IdentityActionMap:
    identity_action: np.ndarray
    verified: bool


@dataclass(frozen=True, eq=False)
class SuboptimalityReport:
    d: np.ndarray
    lo: float
    hi: float


def _extrema(mdp, table):
    lo, hi = float(np.min(table)), float(np.max(table))
    if mdp.absorbing:
        lo, hi = min(lo, 0.0), max(hi, 0.0)
    return lo, hi


def _field(mdp, delta, mode):
    lo, hi = _extrema(mdp, delta)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("delta field is not finite")
    return DeltaField(delta=delta, mode=mode, inf_delta=lo, sup_delta=hi)


def delta_soft(mdp, reg, q):
    """``r + gamma E V(s') - Q(s, a)``: the soft Bellman residual of ``q``."""
    if reg.is_standard:
        raise ValueError("delta_soft needs a finite beta; use delta_standard")
    q = _check_q(q, mdp.shape)
    return _field(mdp, bellman_backup(mdp, reg, q) - q, SOFT)


def delta_standard(mdp, v):
    """``r + gamma E V(s') - V(s)``: the reward shaped by the potential ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (mdp.num_states,):
        raise ValueError(f"state table shape {v.shape} does not match ({mdp.num_states},)")
    delta = mdp.reward + mdp.discount * mdp.expected_next(v) - v[:, None]
    return _field(mdp, delta, STANDARD_MODE)


def _assemble(mdp, ev, inf_delta, sup_delta):
    H = mdp.horizon
    g = mdp.discount
    lower = mdp.reward + g * (ev + inf_delta * H)
    upper = mdp.reward + g * (ev + sup_delta * H)
    return BoundPair(lower=lower, upper=upper, inf_delta=inf_delta, sup_delta=sup_delta, horizon=H)


def bounds_from_delta(mdp, value_estimate, delta):
    """Bounds ``r + gamma (E V(s') + H * {inf, sup} delta)``.

    ``value_estimate`` is the state-value table the field was built from
    (the soft value of the Q estimate in soft mode).
    """
    if mdp.discount >= 1.0:
        raise ValueError("bounds need discount < 1 (the horizon diverges)")
    v = np.asarray(value_estimate, dtype=np.float64)
    if v.shape != (mdp.num_states,):
        raise ValueError(f"state table shape {v.shape} does not match ({mdp.num_states},)")
    if delta.delta.shape != mdp.shape:
        raise ValueError("delta field shape does not match the MDP")
    return _assemble(mdp, mdp.expected_next(v), delta.inf_delta, delta.sup_delta)


def soft_bounds(mdp, reg, q):
    """Bounds from a Q estimate in entropy-regularized RL."""
    q = _check_q(q, mdp.shape)
    return bounds_from_delta(mdp, soft_state_value(q, reg), delta_soft(mdp, reg, q))


def standard_bounds(mdp, v):
    """Bounds from a state-value estimate in standard RL."""
    return bounds_from_delta(mdp, v, delta_standard(mdp, v))


def bounds_for(mdp, reg, q):
    """Soft bounds from ``q``, or standard bounds from ``max_a q`` when ``reg`` is standard."""
    if reg.is_standard:
        return standard_bounds(mdp, hard_state_value(q))
    return soft_bounds(mdp, reg, q)


def reward_only_bounds(mdp):
    """Bounds from the reward extremes alone (the estimate ``Q = 0``)."""
    if mdp.discount >= 1.0:
        raise ValueError("bounds need discount < 1 (the horizon diverges)")
    lo, hi = _extrema(mdp, mdp.reward)
    return _assemble(mdp, np.zeros(mdp.shape), lo, hi)


def verify_identity_map(mdp, identity_action):
    """Check that each ``identity_action[s]`` keeps the agent at ``s`` with probability 1."""
    a = np.asarray(identity_action, dtype=np.int64)
    if a.shape != (mdp.num_states,):
        raise ValueError("one identity action per state is required")
    if np.any(a < 0) or np.any(a >= mdp.num_actions):
        raise ValueError("identity action index out of range")
    s = np.arange(mdp.num_states)
    ok = bool(np.all(mdp.transition[s, a, s] == 1.0))
    return IdentityActionMap(identity_action=a, verified=ok)


def identity_lower_bound(mdp, reg, q, id_map, variant="corrected"):
    """Lower bound on ``Q*`` that follows the identity action after the first step.

    ``r + gamma (V(s') + H * delta(s', a_id(s')))`` with ``s'`` the
    deterministic successor of ``(s, a)``. The multiplier is 1 instead of
    ``H`` when ``s'`` is absorbing, and the bound is exact (``r``) on
    absorbing rows.

    In entropy-regularized mode the ``"paper"`` variant returns that
    expression verbatim. It ignores the relative-entropy cost of committing
    to the identity action and can exceed ``Q*``. The ``"corrected"`` variant
    charges ``-(1/beta) log pi_Q(a_id|s')`` per step, where ``pi_Q`` is the
    Boltzmann policy of ``q``, and is then floored by the horizon lower bound
    (both are valid, so their maximum is). Standard mode has no such cost and
    both variants coincide.
    """
    if variant not in ("corrected", "paper"):
        raise ValueError(f"unknown variant {variant!r}")
    if not id_map.verified:
        raise ValueError("identity action map is not verified")
    if mdp.discount >= 1.0:
        raise ValueError("bounds need discount < 1 (the horizon diverges)")
    q = _check_q(q, mdp.shape)
    P = mdp.transition
    S, A = mdp.shape
    absorbing = np.zeros(S, dtype=bool)
    absorbing[sorted(mdp.absorbing)] = True
    det = np.all((P == 0.0) | (P == 1.0), axis=2)
    bad = ~det & ~absorbing[:, None]
    if np.any(bad):
        s, a = map(int, np.argwhere(bad)[0])
        raise ValueError(f"stochastic transition at (s={s}, a={a}); the identity bound needs determinism")
    succ = np.argmax(P, axis=2)

    v = state_value(q, reg)
    if reg.is_standard:
        field = delta_standard(mdp, v)
    else:
        field = delta_soft(mdp, reg, q)
    a_id = id_map.identity_action
    per_state = field.delta[np.arange(S), a_id]
    if not reg.is_standard and variant == "corrected":
        log_pi_id = reg.beta * (q[np.arange(S), a_id] - v) + reg.log_prior[np.arange(S), a_id]
        per_state = per_state + log_pi_id / reg.beta
    mult = np.where(absorbing, 1.0, mdp.horizon)
    lower = mdp.reward + mdp.discount * (v[succ] + mult[succ] * per_state[succ])
    lower[absorbing] = mdp.reward[absorbing]
    if not reg.is_standard and variant == "corrected":
        lower = np.maximum(lower, bounds_from_delta(mdp, v, field).lower)
    return lower


def suboptimality_bounds(mdp, reg, q_pi):
    """Bracket ``Q* - Q^pi`` between ``H inf d`` and ``H sup d``.

    ``d = r + gamma E V^pi(s') - Q^pi`` with ``V^pi`` the (soft or hard)
    state value of ``q_pi``.
    """
    if mdp.discount >= 1.0:
        raise ValueError("suboptimality bounds need discount < 1")
    q_pi = _check_q(q_pi, mdp.shape)
    d = bellman_backup(mdp, reg, q_pi) - q_pi
    lo, hi = _extrema(mdp, d)
    H = mdp.horizon
    return SuboptimalityReport(d=d, lo=H * lo, hi=H * hi)
