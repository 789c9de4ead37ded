"""DQN on MountainCar with optional clipping of the bootstrapped targets."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from valbound.clipping import clip_hard, smoothed_target
from valbound.dqn.fa_bounds import fa_bounds_from_values
from valbound.dqn.mlp import backprop, init_mlp, loss_output_grad, mlp_forward, mlp_forward_cached, sgd_step
from valbound.dqn.replay import ReplayBuffer
from valbound.envs.mountaincar import NUM_ACTIONS, MountainCar, MountainCarParams, scale_observation
from valbound.rng import derive_rng

DQN_METHODS = ("none", "hard", "soft", "smoothed")
LOG_COLUMNS = ("env_step", "mean_eval_reward", "bellman_loss", "clip_loss", "violation_sum", "epsilon")


@dataclass(frozen=True)
class DqnConfig:
    learning_rate: float = 0.004
    batch_size: int = 128
    buffer_size: int = 10_000
    gamma: float = 0.98
    gradient_steps: int = 8
    learning_starts: int = 1000
    polyak: float = 1.0
    target_update_interval: int = 600
    train_freq: int = 16
    total_steps: int = 150_000
    eps_start: float = 1.0
    eps_end: float = 0.07
    eps_fraction: float = 0.2
    method: str = "none"
    eta: float = 1e-5
    hidden: tuple = (256, 256)
    eval_interval: int = 5000
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.method not in DQN_METHODS:
            raise ValueError(f"unknown clip method {self.method!r}")
        for name in ("learning_rate", "batch_size", "buffer_size", "gradient_steps", "target_update_interval",
                     "train_freq", "total_steps", "eval_interval", "eval_episodes", "eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_starts < 0:
            raise ValueError("learning_starts must be nonnegative")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.polyak <= 1:
            raise ValueError("polyak must lie in (0, 1]")
        if not 0 < self.eps_fraction <= 1:
            raise ValueError("eps_fraction must lie in (0, 1]")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def epsilon_at(config, step):
    """Linear decay from ``eps_start`` to ``eps_end`` over ``eps_fraction * total_steps`` steps."""
    span = config.eps_fraction * config.total_steps
    frac = min(step / span, 1.0)
    return (1.0 - frac) * config.eps_start + frac * config.eps_end


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    hard_violations: int = 0
    gradient_steps: int = 0

    def column(self, name):
        k = LOG_COLUMNS.index(name)
        return np.array([row[k] for row in self.rows], dtype=np.float64)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for step, *vals in self.rows:
                w.writerow([step] + [f"{v:.17g}" for v in vals])


def evaluate(net, params, episodes, rng):
    """Mean undiscounted return of the greedy policy over ``episodes`` parallel episodes."""
    pos = rng.uniform(params.start_low, params.start_high, size=episodes)
    vel = np.zeros(episodes)
    total = np.zeros(episodes)
    active = np.ones(episodes, dtype=bool)
    center = 0.5 * (params.min_position + params.max_position)
    half = 0.5 * (params.max_position - params.min_position)
    for _ in range(params.max_steps):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        obs = np.stack([(pos[idx] - center) / half, vel[idx] / params.max_speed], axis=1)
        act = mlp_forward(net, obs).argmax(axis=1)
        v = vel[idx] + (act - 1) * params.force - np.cos(3.0 * pos[idx]) * params.gravity
        v = np.clip(v, -params.max_speed, params.max_speed)
        p = np.clip(pos[idx] + v, params.min_position, params.max_position)
        v = np.where((p == params.min_position) & (v < 0), 0.0, v)
        pos[idx], vel[idx] = p, v
        total[idx] += params.step_reward
        active[idx] = p < params.goal_position
    return float(total.mean())


def _update_target(target, online, polyak):
    if polyak == 1.0:
        target.load_from(online)
        return
    for dst, src in zip(target.weights + target.biases, online.weights + online.biases):
        dst *= 1.0 - polyak
        dst += polyak * src


class _TargetValues:
    """``max_a target(s)`` and ``max_a target(s')`` for every buffer slot.

    The target network only changes at syncs, so its state values are
    computed once per sync and for new transitions on first use.
    """

    def __init__(self, buffer):
        self.buffer = buffer
        self.v_s = np.zeros(buffer.capacity)
        self.v_next = np.zeros(buffer.capacity)
        self.valid = np.zeros(buffer.capacity, dtype=bool)

    def invalidate(self, idx=None):
        if idx is None:
            self.valid[:] = False
        else:
            self.valid[idx] = False

    def lookup(self, net, idx):
        missing = np.unique(idx[~self.valid[idx]])
        if missing.size:
            n = missing.size
            x = np.concatenate([self.buffer.obs[missing], self.buffer.next_obs[missing]])
            v = mlp_forward(net, x).max(axis=1)
            self.v_s[missing] = v[:n]
            self.v_next[missing] = v[n:]
            self.valid[missing] = True
        return self.v_s[idx], self.v_next[idx]


def dqn_train(env_params=MountainCarParams(), config=DqnConfig(), dtype=np.float32):
    """Train a DQN agent; returns ``(TrainLog, online_params)``.

    Every run is fully determined by ``config.seed``.
    """
    seed = config.seed
    env = MountainCar(env_params, derive_rng(seed, "env"))
    explore = derive_rng(seed, "explore")
    eval_rng = derive_rng(seed, "eval")
    sizes = (2, *config.hidden, NUM_ACTIONS)
    online = init_mlp(sizes, derive_rng(seed, "init"), dtype)
    target = online.copy()
    buffer = ReplayBuffer(config.buffer_size, 2, derive_rng(seed, "replay"), dtype)
    gamma, method = config.gamma, config.method
    B = config.batch_size
    arange_b = np.arange(B)
    target_values = _TargetValues(buffer)

    log = TrainLog()
    window = {"loss": [], "clip": [], "viol": []}
    obs = scale_observation(env.reset(), env_params)

    for step in range(1, config.total_steps + 1):
        eps = epsilon_at(config, step)
        if step <= config.learning_starts or explore.random() < eps:
            action = int(explore.integers(NUM_ACTIONS))
        else:
            action = int(np.argmax(mlp_forward(online, obs)))
        state, reward, terminated, truncated = env.step(action)
        next_obs = scale_observation(state, env_params)
        target_values.invalidate(buffer.pos)
        buffer.add(obs, action, reward, next_obs, terminated)
        obs = scale_observation(env.reset(), env_params) if terminated or truncated else next_obs

        if step > config.learning_starts and step % config.train_freq == 0:
            for _ in range(config.gradient_steps):
                idx = buffer.sample_indices(B)
                batch = buffer.gather(idx)
                x = np.concatenate([batch.obs, batch.next_obs])
                try:
                    acts = mlp_forward_cached(online, x)
                    vt_s, vt_next = target_values.lookup(target, idx)
                except FloatingPointError as exc:
                    raise RuntimeError(f"training diverged at env step {step}: {exc}") from exc
                out_o = acts[-1]
                v_on = out_o.max(axis=1).astype(np.float64)
                cont = 1.0 - batch.dones
                raw = batch.rewards + gamma * cont * vt_next
                bnd = fa_bounds_from_values(batch.rewards, batch.dones, v_on[:B], v_on[B:], vt_s, vt_next, gamma)
                clipped = clip_hard(raw, bnd.lower, bnd.upper)
                violation = np.abs(raw - clipped)
                if method == "hard":
                    y = clipped
                    log.hard_violations += int(np.count_nonzero((y < bnd.lower) | (y > bnd.upper)))
                elif method == "smoothed":
                    y = smoothed_target(raw, clipped, violation)
                else:
                    y = raw
                q_sa = out_o[arange_b, batch.actions]
                eta = config.eta if method == "soft" else 0.0
                loss, clip_loss, dout = loss_output_grad(
                    q_sa, y.astype(dtype), batch.actions, NUM_ACTIONS,
                    clipped.astype(dtype), violation > 0, eta,
                )
                if not math.isfinite(loss):
                    raise RuntimeError(f"training diverged at env step {step}: loss {loss}")
                gw, gb = backprop(online, acts, dout, rows=B)
                sgd_step(online, gw, gb, config.learning_rate)
                log.gradient_steps += 1
                window["loss"].append(loss)
                window["clip"].append(float(np.mean(np.abs(q_sa - clipped))))
                window["viol"].append(float(violation.sum()))

        if step % config.target_update_interval == 0:
            _update_target(target, online, config.polyak)
            target_values.invalidate()

        if step % config.eval_interval == 0:
            reward_mean = evaluate(online, env_params, config.eval_episodes, eval_rng)
            mean = (lambda xs: float(np.mean(xs)) if xs else math.nan)
            log.rows.append((step, reward_mean, mean(window["loss"]), mean(window["clip"]), mean(window["viol"]), eps))
            window = {"loss": [], "clip": [], "viol": []}
    return log, online
