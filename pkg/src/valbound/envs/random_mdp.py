"""Seeded random finite MDPs."""

import numpy as np

from valbound.mdp import TabularMdp


def random_mdp(rng, num_states, num_actions, gamma, num_absorbing=0, sparsity=0.5, reward_scale=1.0):
    """Dirichlet transitions with random zero entries and normal rewards.

    The last ``num_absorbing`` states are made absorbing.
    """
    S, A = num_states, num_actions
    if not 0 <= num_absorbing < S:
        raise ValueError("need at least one non-absorbing state")
    P = rng.dirichlet(np.ones(S), size=(S, A))
    mask = rng.random((S, A, S)) < sparsity
    mask[np.arange(S)[:, None], np.arange(A)[None, :], rng.integers(S, size=(S, A))] = False
    P = np.where(mask, 0.0, P)
    P /= P.sum(axis=2, keepdims=True)
    r = reward_scale * rng.normal(size=(S, A))
    absorbing = frozenset(range(S - num_absorbing, S))
    for g in absorbing:
        P[g] = 0.0
        P[g, :, g] = 1.0
    return TabularMdp(P, r, gamma, absorbing)


def random_chain_tasks(rng, num_interior, num_actions, num_goals, num_tasks):
    """Undiscounted tasks on shared deterministic DAG dynamics that differ only
    in their absorbing-state rewards."""
    S = num_interior + num_goals
    P = np.zeros((S, num_actions, S))
    for s in range(num_interior):
        for a in range(num_actions):
            P[s, a, rng.integers(s + 1, S)] = 1.0
    goals = range(num_interior, S)
    for g in goals:
        P[g, :, g] = 1.0
    base = -rng.uniform(0.0, 1.0, size=(S, num_actions))
    tasks = []
    for _ in range(num_tasks):
        r = base.copy()
        r[num_interior:] = rng.normal(size=(num_goals, num_actions))
        tasks.append(TabularMdp(P, r, 1.0, frozenset(goals)))
    return tasks
