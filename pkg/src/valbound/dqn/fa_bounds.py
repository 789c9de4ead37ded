"""Per-batch double-sided bounds for function-approximation targets.

For a network ``N`` with ``V_N(s) = max_a N(s)[a]`` the shaped residual
``D_N = r + gamma V_N(s') - V_N(s)`` (``r - V_N(s)`` at terminal
transitions) plays the role of the corrective reward. Its extremes over the
batch stand in for the extremes over the whole space. Terminal rows have the
exact target ``r``, so their bounds collapse to ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from valbound.dqn.mlp import mlp_forward


@dataclass(frozen=True, eq=False)
class FaBounds:
    lower: np.ndarray
    upper: np.ndarray
    fallback: np.ndarray  # rows where the two nets disagreed and one net was used alone


def single_net_bounds(rewards, dones, v_s, v_next, gamma):
    """``(lower, upper, spread)`` for one network's state values."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("empty batch")
    cont = 1.0 - np.asarray(dones, dtype=np.float64)
    v_next = cont * np.asarray(v_next, dtype=np.float64)
    delta = rewards + gamma * v_next - np.asarray(v_s, dtype=np.float64)
    lo, hi = float(delta.min()), float(delta.max())
    H = 1.0 / (1.0 - gamma)
    lower = np.where(cont > 0, rewards + gamma * (v_next + lo * H), rewards)
    upper = np.where(cont > 0, rewards + gamma * (v_next + hi * H), rewards)
    return lower, upper, hi - lo


def combine_bounds(first, second):
    """Tightest combination of two bound sets, falling back to the net with
    the narrower residual spread on rows where they do not intersect."""
    lo1, up1, spread1 = first
    lo2, up2, spread2 = second
    lower = np.maximum(lo1, lo2)
    upper = np.minimum(up1, up2)
    bad = lower > upper
    if np.any(bad):
        lo_f, up_f = (lo1, up1) if spread1 <= spread2 else (lo2, up2)
        lower = np.where(bad, lo_f, lower)
        upper = np.where(bad, up_f, upper)
    return FaBounds(lower=lower, upper=upper, fallback=bad)


def fa_bounds_from_values(rewards, dones, v_online_s, v_online_next, v_target_s, v_target_next, gamma):
    if not 0 < gamma < 1:
        raise ValueError("bounds need gamma in (0, 1)")
    return combine_bounds(
        single_net_bounds(rewards, dones, v_online_s, v_online_next, gamma),
        single_net_bounds(rewards, dones, v_target_s, v_target_next, gamma),
    )


def fa_bounds(batch, online_net, target_net, gamma):
    """Bounds on the optimal value of each ``(s, a)`` in ``batch`` from both networks."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    x = np.concatenate([batch.obs, batch.next_obs])
    n = len(batch)
    v_on = mlp_forward(online_net, x).max(axis=1)
    v_tg = mlp_forward(target_net, x).max(axis=1)
    return fa_bounds_from_values(batch.rewards, batch.dones, v_on[:n], v_on[n:], v_tg[:n], v_tg[n:], gamma)
