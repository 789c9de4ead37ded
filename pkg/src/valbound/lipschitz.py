"""Bounds for continuous state-action spaces from finite data and Lipschitz constants.

Extremes of a Lipschitz function over a space of diameter ``D`` follow from
a finite sample of its values. For an entropy-regularized task with
Lipschitz rewards and dynamics and a Gaussian policy whose standard
deviation is bounded below, the action-value function is Lipschitz with a
closed-form constant, the state value can be estimated from the action value
at the policy mean, and the errors of these estimates propagate into the
double-sided bounds. Actions are one-dimensional; the product metric is the
1-norm, so ``D = D_S + D_A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PAPER = "paper"
CORRECTED = "corrected"
VARIANTS = (PAPER, CORRECTED)

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class InfeasibleError(ValueError):
    """The contraction condition ``gamma L_p (1 + L_N) < 1`` fails."""


@dataclass(frozen=True)
class SamplePoint:
    state: tuple
    action: tuple
    value: float

    def __post_init__(self):
        state = tuple(float(x) for x in np.atleast_1d(self.state))
        action = tuple(float(x) for x in np.atleast_1d(self.action))
        value = float(self.value)
        if not all(math.isfinite(x) for x in (*state, *action, value)):
            raise ValueError("sample point must be finite")
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "action", action)
        object.__setattr__(self, "value", value)


@dataclass(frozen=True)
class LipschitzSpec:
    L_r: float
    L_p: float
    diameter_state: float
    diameter_action: float
    sigma_min: float
    p_norm: float = 1.0

    def __post_init__(self):
        for name in ("L_r", "L_p", "diameter_state", "diameter_action", "sigma_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.p_norm >= 1:
            raise ValueError("p_norm must be at least 1")

    @property
    def diameter(self):
        p = self.p_norm
        if math.isinf(p):
            return max(self.diameter_state, self.diameter_action)
        return (self.diameter_state**p + self.diameter_action**p) ** (1.0 / p)


@dataclass(frozen=True)
class LipschitzConstants:
    L_N: float
    L_V: float
    L_Q: float
    L_Delta: float
    contraction: float  # gamma * L_p * (1 + L_N)

    def check_feasible(self):
        if not self.contraction < 1.0:
            raise InfeasibleError(f"gamma * L_p * (1 + L_N) = {self.contraction:.6g} is not < 1")
        return self


@dataclass(frozen=True, eq=False)
class GaussianPolicyField:
    """Per-state mean and standard deviation of a Gaussian policy, plus the
    sup-norm error ``epsilon`` of the Q estimate."""

    mu: np.ndarray
    sigma: np.ndarray
    epsilon: float = 0.0
    sigma_min: float = 0.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), mu.shape).copy()
        if np.any(sigma <= 0) or np.any(sigma < self.sigma_min):
            raise ValueError("sigma must be positive and at least sigma_min")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True, eq=False)
class ErrorProfile:
    A: np.ndarray
    variant: str


def extrema_bounds(samples, L, D):
    """``(sup_upper, inf_lower) = (min(values) + L D, max(values) - L D)``.

    Any L-Lipschitz function on a space of diameter ``D`` is below
    ``sup_upper`` and above ``inf_lower`` everywhere. ``samples`` holds
    SamplePoints or bare values.
    """
    values = np.array([s.value if isinstance(s, SamplePoint) else s for s in samples], dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty dataset")
    if not (L > 0 and D > 0):
        raise ValueError("L and D must be positive")
    return float(values.min() + L * D), float(values.max() - L * D)


def gaussian_density_constant(sigma_min):
    """``L_N = sigma_min^-2 (2 pi e)^-1/2``."""
    return sigma_min**-2 / math.sqrt(2.0 * math.pi * math.e)


def lipschitz_constants(spec, gamma, beta):
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not beta > 0:
        raise ValueError("beta must be positive")
    L_N = gaussian_density_constant(spec.sigma_min)
    contraction = gamma * spec.L_p * (1.0 + L_N)
    if not contraction < 1.0:
        raise InfeasibleError(f"gamma * L_p * (1 + L_N) = {contraction:.6g} is not < 1")
    ent = 1.0 / (beta * spec.sigma_min)
    L_Q = (spec.L_r + gamma * spec.L_p * ent) / (1.0 - contraction)
    L_V = L_Q * (1.0 + L_N) + ent
    L_Delta = max(spec.L_r, L_Q, gamma * spec.L_p * L_V)
    return LipschitzConstants(L_N=L_N, L_V=L_V, L_Q=L_Q, L_Delta=L_Delta, contraction=contraction)


def lq_recurrence(spec, gamma, beta, steps, l0=None):
    """Iterate ``L <- L_r + gamma ((1 + L_N) L + 1/(beta sigma_min)) L_p`` from ``l0`` (default ``L_r``)."""
    L_N = gaussian_density_constant(spec.sigma_min)
    ent = 1.0 / (beta * spec.sigma_min)
    L = spec.L_r if l0 is None else float(l0)
    for _ in range(steps):
        L = spec.L_r + gamma * ((1.0 + L_N) * L + ent) * spec.L_p
    return L


def gaussian_entropy(sigma):
    return 0.5 * np.log(2.0 * math.pi * np.asarray(sigma, dtype=np.float64) ** 2) + 0.5


def gaussian_v_estimate(q_at_mean, sigma, beta, log_prior_density=0.0):
    """One-point state value ``Q(s, mu) + (H[N(mu, sigma)] + log_prior_density) / beta``.

    With the default ``log_prior_density = 0`` the prior is ignored and only
    the entropy remains. A uniform prior of density ``1/w`` corresponds to
    ``log_prior_density = -log w``.
    """
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    out = np.asarray(q_at_mean, dtype=np.float64) + (gaussian_entropy(sigma) + log_prior_density) / beta
    return float(out) if out.ndim == 0 else out


def v_error_bound(constants, mu, sigma, epsilon, variant=CORRECTED):
    """Bound on ``|V_bar - V^pi|`` for the one-point estimate.

    ``"paper"``: ``sqrt(2/pi) L_Q sigma exp(-mu^2 / 2 sigma^2) + epsilon``.
    ``"corrected"``: ``sqrt(2/pi) L_Q sigma + epsilon``, the Gaussian mean
    absolute deviation, which does not depend on ``mu``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    constants.check_feasible()
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    out = SQRT_2_OVER_PI * constants.L_Q * sigma
    if variant == PAPER:
        out = out * np.exp(-(mu**2) / (2.0 * sigma**2))
    out = out + epsilon
    return float(out) if out.ndim == 0 else out


def error_profile(constants, policy, variant=CORRECTED):
    A = np.atleast_1d(v_error_bound(constants, policy.mu, policy.sigma, policy.epsilon, variant))
    return ErrorProfile(A=A, variant=variant)


def delta_error_bound(gamma, profile, successors):
    """``gamma E_{s'} A(s')`` for one successor distribution (vector) or many (rows of a matrix)."""
    A = profile.A
    if successors.shape[-1] != A.shape[0]:
        raise ValueError(f"profile has {A.shape[0]} states, successor distribution has {successors.shape[-1]}")
    out = gamma * (successors @ A)
    return float(out) if np.ndim(out) == 0 else np.asarray(out)


def propagated_bounds(reward, successors, v_bar, profile, dataset_delta, dataset_successors, constants, diameter, gamma):
    """Double-sided bounds with one-point, residual and sampling errors propagated.

    ``reward``: ``(N,)`` rewards at the query pairs; ``successors``: ``(N, S)``
    successor distributions over the state grid (dense or sparse);
    ``v_bar``: ``(S,)`` one-point state values; ``dataset_delta``: ``(M,)``
    estimated residuals on the dataset with successor rows
    ``dataset_successors``. The ``gamma E A`` correction is evaluated per
    dataset row with that row's successors. Returns ``(lower, upper)``.
    """
    if not 0 < gamma < 1:
        raise ValueError("bounds need gamma in (0, 1)")
    constants.check_feasible()
    dataset_delta = np.asarray(dataset_delta, dtype=np.float64).ravel()
    if dataset_delta.size == 0:
        raise ValueError("empty dataset")
    if not diameter >= 0:
        raise ValueError("diameter must be nonnegative")
    A = profile.A
    if np.shape(v_bar) != A.shape:
        raise ValueError("v_bar and profile must cover the same states")
    corr = delta_error_bound(gamma, profile, dataset_successors)
    spread = constants.L_Delta * diameter
    hi = float(np.min(dataset_delta + corr)) + spread
    lo = float(np.max(dataset_delta - corr)) - spread
    ev = np.asarray(successors @ np.asarray(v_bar, dtype=np.float64))
    ea = np.asarray(successors @ A)
    H = 1.0 / (1.0 - gamma)
    reward = np.asarray(reward, dtype=np.float64)
    upper = reward + gamma * (ev + ea) + gamma * H * hi
    lower = reward + gamma * (ev - ea) + gamma * H * lo
    return lower, upper
