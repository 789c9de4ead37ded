"""Augment an MDP with an action that keeps the agent where it is."""

from __future__ import annotations

import numpy as np

from valbound.bounds import verify_identity_map
from valbound.mdp import TabularMdp


def add_identity_action(mdp, reward=None):
    """Append a stay-in-place action to every state.

    ``reward`` is the per-state reward of the new action (scalar or
    ``(S,)``); it defaults to the minimum reward of the MDP. Absorbing states
    keep their pinned value, so their new action copies their first action's
    reward. Returns ``(mdp, IdentityActionMap)``.
    """
    S, A = mdp.shape
    if reward is None:
        reward = float(mdp.reward.min())
    new_r = np.broadcast_to(np.asarray(reward, dtype=np.float64), (S,)).copy()
    for s in mdp.absorbing:
        new_r[s] = mdp.reward[s, 0]
    P = np.zeros((S, A + 1, S))
    P[:, :A] = mdp.transition
    P[np.arange(S), A, np.arange(S)] = 1.0
    r = np.concatenate([mdp.reward, new_r[:, None]], axis=1)
    out = TabularMdp(P, r, mdp.discount, mdp.absorbing)
    id_map = verify_identity_map(out, np.full(S, A))
    return out, id_map
