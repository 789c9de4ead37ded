"""Finite MDPs, soft and standard Bellman backups, solvers, and policy evaluation.

Conventions used throughout the package:

* ``q`` tables have shape ``(num_states, num_actions)``.
* States in ``mdp.absorbing`` are terminal for the purpose of backups:
  their action values are pinned to their reward, ``Q(s, a) = r(s, a)``,
  and nothing propagates beyond them.
* ``RegularizationSpec.beta == math.inf`` means standard (un-regularized) RL.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from valbound import kernels

ROW_TOL = 1e-12
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000

STANDARD = math.inf


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap."""

    def __init__(self, message, iterations, residual):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray
    reward: np.ndarray
    discount: float
    absorbing: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        P = np.ascontiguousarray(self.transition, dtype=np.float64)
        r = np.ascontiguousarray(self.reward, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise ValueError(f"reward shape {r.shape} does not match transition {P.shape[:2]}")
        if P.shape[0] == 0 or P.shape[1] == 0:
            raise ValueError("MDP needs at least one state and one action")
        if np.any(P < 0):
            raise ValueError("transition has negative entries")
        rows = P.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > ROW_TOL:
            raise ValueError("transition rows must sum to 1")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        gamma = float(self.discount)
        if not (0.0 < gamma <= 1.0):
            raise ValueError(f"discount must lie in (0, 1], got {gamma}")
        absorbing = frozenset(int(s) for s in self.absorbing)
        for s in absorbing:
            if not 0 <= s < P.shape[0]:
                raise ValueError(f"absorbing state {s} out of range")
            if np.any(P[s, :, s] != 1.0):
                raise ValueError(f"absorbing state {s} must self-loop under every action")
        if gamma == 1.0 and not absorbing:
            raise ValueError("discount 1 requires a nonempty absorbing set")
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", gamma)
        object.__setattr__(self, "absorbing", absorbing)

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]

    @property
    def shape(self):
        return self.reward.shape

    @property
    def horizon(self):
        """Effective horizon ``1 / (1 - gamma)``."""
        if self.discount >= 1.0:
            raise ValueError("horizon is undefined for discount 1")
        return 1.0 / (1.0 - self.discount)

    @property
    def continuation(self):
        """Per-state mask: 0.0 on absorbing states, 1.0 elsewhere."""
        mask = np.ones(self.num_states)
        mask[sorted(self.absorbing)] = 0.0
        return mask

    def expected_next(self, v):
        """``E_{s'} v(s')`` for every (s, a); zero on absorbing rows."""
        v = np.asarray(v, dtype=np.float64)
        return self.continuation[:, None] * (self.transition @ v)

    def with_reward(self, reward):
        return TabularMdp(self.transition, reward, self.discount, self.absorbing)

    def is_deterministic(self):
        return bool(np.all((self.transition == 0.0) | (self.transition == 1.0)))

    def to_json(self):
        return dumps_json(
            {
                "num_states": self.num_states,
                "num_actions": self.num_actions,
                "gamma": self.discount,
                "absorbing": sorted(self.absorbing),
                "reward": self.reward.tolist(),
                "transition": self.transition.tolist(),
            }
        )

    @classmethod
    def from_dict(cls, doc):
        P = np.asarray(doc["transition"], dtype=np.float64)
        r = np.asarray(doc["reward"], dtype=np.float64)
        if P.shape[:2] != (doc["num_states"], doc["num_actions"]):
            raise ValueError("num_states/num_actions disagree with the tables")
        return cls(P, r, doc["gamma"], frozenset(doc.get("absorbing", ())))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _float17(x):
    return float(f"{x:.17g}")


def dumps_json(doc):
    """JSON with floats written at 17 significant digits (exact round trip)."""

    def fix(o):
        if isinstance(o, float):
            return _float17(o)
        if isinstance(o, dict):
            return {k: fix(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [fix(v) for v in o]
        return o

    return json.dumps(fix(doc))


@dataclass(frozen=True, eq=False)
class RegularizationSpec:
    """Inverse temperature and prior policy.

    ``beta = math.inf`` (``STANDARD``) selects standard RL; the prior is then
    only used for validation of policies.
    """

    beta: float
    prior: np.ndarray

    def __post_init__(self):
        beta = float(self.beta)
        if not beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        prior = np.ascontiguousarray(self.prior, dtype=np.float64)
        if prior.ndim != 2:
            raise ValueError("prior must be a (S, A) table")
        if np.any(prior < 0) or np.max(np.abs(prior.sum(axis=1) - 1.0)) > ROW_TOL:
            raise ValueError("prior rows must be probability vectors")
        prior.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "prior", prior)

    @classmethod
    def uniform(cls, beta, num_states, num_actions):
        return cls(beta, np.full((num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def standard(cls, num_states, num_actions):
        return cls.uniform(STANDARD, num_states, num_actions)

    @property
    def is_standard(self):
        return math.isinf(self.beta)

    @property
    def log_prior(self):
        with np.errstate(divide="ignore"):
            return np.log(self.prior)


def _check_q(q, shape=None):
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2:
        raise ValueError(f"Q table must be 2-D, got shape {q.shape}")
    if shape is not None and q.shape != tuple(shape):
        raise ValueError(f"Q table shape {q.shape} does not match {tuple(shape)}")
    if not np.all(np.isfinite(q)):
        raise ValueError("Q table has non-finite entries")
    return q


def _check_reg(reg, shape):
    if reg.prior.shape != tuple(shape):
        raise ValueError(f"prior shape {reg.prior.shape} does not match {tuple(shape)}")


def soft_state_value(q, reg):
    """``V(s) = 1/beta log E_{a~prior} exp(beta Q(s, a))`` computed with a max shift."""
    q = _check_q(q)
    _check_reg(reg, q.shape)
    if reg.is_standard:
        raise ValueError("soft_state_value needs a finite beta; use hard_state_value")
    return kernels.state_values(q, reg.log_prior, reg.beta)


def hard_state_value(q):
    q = _check_q(q)
    if q.shape[1] == 0:
        raise ValueError("empty action set")
    return q.max(axis=1)


def state_value(q, reg):
    """Soft or hard state value depending on ``reg``."""
    if reg.is_standard:
        return hard_state_value(q)
    return soft_state_value(q, reg)


def _backup(mdp, q, reg):
    q = _check_q(q, mdp.shape)
    if reg is not None:
        _check_reg(reg, mdp.shape)
    v = hard_state_value(q) if reg is None or reg.is_standard else soft_state_value(q, reg)
    return kernels.backup(mdp.transition, mdp.reward, mdp.continuation, mdp.discount, v)


def soft_backup(mdp, reg, q):
    """``r + gamma E_{s'} V(s')`` with the soft state value; absorbing rows return ``r``."""
    return _backup(mdp, q, reg)


def hard_backup(mdp, q):
    return _backup(mdp, q, None)


def bellman_backup(mdp, reg, q):
    """Dispatch to the soft or hard backup depending on ``reg``."""
    return _backup(mdp, q, None if reg.is_standard else reg)


@dataclass(frozen=True, eq=False)
class SolveReport:
    q: np.ndarray
    iterations: int
    residual: float


def solve(mdp, reg, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Value iteration from ``Q = 0`` until consecutive iterates differ by at most ``tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_reg(reg, mdp.shape)
    q0 = np.zeros(mdp.shape)
    q, it, res = kernels.value_iteration(
        mdp.transition, mdp.reward, mdp.continuation, mdp.discount,
        reg.log_prior, reg.beta, float(tol), int(max_iter), q0,
    )
    if not np.all(np.isfinite(q)):
        raise ConvergenceError("value iteration diverged", it, res)
    if res > tol:
        raise ConvergenceError(
            f"no convergence after {it} iterations (residual {res:.3e} > tol {tol:.1e})", it, res
        )
    return SolveReport(q=q, iterations=int(it), residual=float(res))


def boltzmann_policy(q, reg):
    """``pi(a|s) ∝ prior(a|s) exp(beta Q(s, a))``; greedy one-hot when beta is infinite."""
    q = _check_q(q)
    _check_reg(reg, q.shape)
    if reg.is_standard:
        pi = np.zeros_like(q)
        pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
        return pi
    x = reg.beta * q + reg.log_prior
    x = x - x.max(axis=1, keepdims=True)
    w = np.exp(x)
    return w / w.sum(axis=1, keepdims=True)


def greedy_actions(q):
    """Argmax per state, lowest index on ties."""
    return np.argmax(_check_q(q), axis=1)


def policy_evaluation(mdp, reg, pi, tol=DEFAULT_TOL):
    """Value of policy ``pi`` including the KL penalty against the prior.

    Solves the state-level linear system
    ``V = sum_a pi (r - 1/beta log(pi/prior)) + gamma P_pi V`` directly and
    returns ``Q = r + gamma E V``. Standard mode drops the KL term.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != mdp.shape:
        raise ValueError(f"policy shape {pi.shape} does not match {mdp.shape}")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > ROW_TOL:
        raise ValueError("policy rows must be probability vectors")
    _check_reg(reg, mdp.shape)
    r_pi = mdp.reward.copy()
    if not reg.is_standard:
        if np.any((pi > 0) & (reg.prior == 0)):
            raise ValueError("policy puts mass where the prior is zero (infinite KL)")
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.where(pi > 0, np.log(pi) - reg.log_prior, 0.0)
        r_pi = r_pi - log_ratio / reg.beta
    S = mdp.num_states
    cont = mdp.continuation
    reward_per_state = np.sum(pi * r_pi, axis=1)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition) * (mdp.discount * cont)[:, None]
    v = np.linalg.solve(np.eye(S) - P_pi, reward_per_state)
    # the KL term enters through V, not through the immediate reward of Q(s, a)
    q = mdp.reward + mdp.discount * mdp.expected_next(v)
    resid = _policy_residual(mdp, reg, pi, q)
    if not np.isfinite(resid) or resid > tol:
        raise ConvergenceError(f"policy evaluation residual {resid:.3e} exceeds tol", 1, resid)
    return q


def _policy_residual(mdp, reg, pi, q):
    if reg.is_standard:
        v = np.sum(pi * q, axis=1)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.where(pi > 0, np.log(pi) - reg.log_prior, 0.0)
        v = np.sum(pi * (q - log_ratio / reg.beta), axis=1)
    return float(np.max(np.abs(mdp.reward + mdp.discount * mdp.expected_next(v) - q)))
