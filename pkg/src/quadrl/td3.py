"""Twin Delayed DDPG on top of the numpy MLPs in :mod:`quadrl.nn`."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn import Adam, Mlp, adam_update, backward, forward, soft_update

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Td3Config:
    total_steps: int = 300_000
    batch_size: int = 256
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    explore_noise: float = 0.1
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    warmup_steps: int = 25_000
    buffer_capacity: int = 1_000_000
    hidden: tuple[int, ...] = (64, 64)
    eval_every: int = 25_000
    eval_episodes: int = 10
    hover_bias: bool = False
    curriculum_steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be >= 1")
        if self.curriculum_steps < 0:
            raise ValueError("curriculum_steps must be >= 0")


class InsufficientData(RuntimeError):
    """Raised when sampling more transitions than the buffer holds."""


class TrainingDiverged(FloatingPointError):
    """Raised on non-finite losses."""


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros((self.capacity, act_dim))
        self.rewards = np.zeros(self.capacity)
        self.dones = np.zeros(self.capacity)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, obs, action, reward: float, next_obs, done: bool) -> None:
        i = self.inserted % self.capacity
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self.inserted += 1

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n > len(self):
            raise InsufficientData(f"requested {n} transitions, buffer holds {len(self)}")
        return rng.integers(0, len(self), size=n)

    def sample(self, rng: np.random.Generator, n: int):
        idx = self.sample_indices(rng, n)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx]


@dataclass
class TrainStats:
    critic_loss: float
    actor_loss: float | None
    target_mean: float


def bounded_action_gradient(dq_da: np.ndarray, raw: np.ndarray, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Inverting-gradients rule for a linear actor whose output is clipped by the env.

    Increases are scaled by the remaining room to ``high`` and decreases by
    the room to ``low``; outside the box the factor turns negative, so the
    update pulls the raw output back inside instead of drifting further
    out where the critic was never trained.
    """
    width = high - low
    return np.where(dq_da > 0, dq_da * (high - raw) / width, dq_da * (raw - low) / width)


class Td3Agent:
    """Actor, twin critics, their targets and optimizers, plus the replay buffer."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: Td3Config | None = None, rng: np.random.Generator | None = None):
        self.cfg = cfg or Td3Config()
        self.rng = rng if rng is not None else np.random.default_rng(self.cfg.seed)
        self.obs_dim, self.act_dim = obs_dim, act_dim
        hidden = list(self.cfg.hidden)
        self.actor = Mlp([obs_dim, *hidden, act_dim], self.rng)
        self.critic1 = Mlp([obs_dim + act_dim, *hidden, 1], self.rng)
        self.critic2 = Mlp([obs_dim + act_dim, *hidden, 1], self.rng)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = Adam(self.actor.n_params, self.cfg.actor_lr)
        self.critic1_opt = Adam(self.critic1.n_params, self.cfg.critic_lr)
        self.critic2_opt = Adam(self.critic2.n_params, self.cfg.critic_lr)
        capacity = min(self.cfg.buffer_capacity, max(self.cfg.total_steps, self.cfg.batch_size))
        self.buffer = ReplayBuffer(obs_dim, act_dim, capacity)
        self.updates = 0

    def select_action(self, obs, explore: bool = False) -> np.ndarray:
        a = self.actor(obs)
        if explore:
            a = a + self.cfg.explore_noise * self.rng.standard_normal(a.shape)
        return np.clip(a, -1.0, 1.0)

    def predict(self, obs) -> np.ndarray:
        """Deterministic clipped action."""
        return self.select_action(obs, explore=False)

    def critic_target(self, next_obs, rewards, dones) -> np.ndarray:
        cfg = self.cfg
        a_next = self.actor_target(next_obs)
        noise = np.clip(
            cfg.target_noise * self.rng.standard_normal(a_next.shape), -cfg.target_noise_clip, cfg.target_noise_clip
        )
        a_next = np.clip(a_next + noise, -1.0, 1.0)
        xa = np.concatenate([next_obs, a_next], axis=1)
        q1 = self.critic1_target(xa)[:, 0]
        q2 = self.critic2_target(xa)[:, 0]
        return rewards + cfg.gamma * (1.0 - dones) * np.minimum(q1, q2)

    def train_step(self) -> TrainStats:
        cfg = self.cfg
        obs, actions, rewards, next_obs, dones = self.buffer.sample(self.rng, cfg.batch_size)
        y = self.critic_target(next_obs, rewards, dones)
        n = obs.shape[0]
        xa = np.concatenate([obs, actions], axis=1)
        critic_loss = 0.0
        for net, opt in ((self.critic1, self.critic1_opt), (self.critic2, self.critic2_opt)):
            q, cache = forward(net, xa)
            err = q[:, 0] - y
            critic_loss += float(err @ err) / n
            grads = backward(net, cache, (2.0 / n) * err[:, None])
            adam_update(net, grads, opt)
        critic_loss *= 0.5
        if not np.isfinite(critic_loss):
            raise TrainingDiverged(f"critic loss became {critic_loss}")

        self.updates += 1
        actor_loss = None
        if self.updates % cfg.policy_delay == 0:
            actor_loss = self._update_actor(obs)
            soft_update(self.actor_target, self.actor, cfg.tau)
            soft_update(self.critic1_target, self.critic1, cfg.tau)
            soft_update(self.critic2_target, self.critic2, cfg.tau)
        return TrainStats(critic_loss, actor_loss, float(y.mean()))

    def _update_actor(self, obs) -> float:
        n = obs.shape[0]
        raw, actor_cache = forward(self.actor, obs)
        q, critic_cache = forward(self.critic1, np.concatenate([obs, np.clip(raw, -1.0, 1.0)], axis=1))
        loss = -float(q.mean())
        if not np.isfinite(loss):
            raise TrainingDiverged(f"actor loss became {loss}")
        _, dx = backward(self.critic1, critic_cache, np.full((n, 1), 1.0 / n), need_input_grad=True)
        ascent = bounded_action_gradient(dx[:, self.obs_dim :], raw)
        grads = backward(self.actor, actor_cache, -ascent)
        adam_update(self.actor, grads, self.actor_opt)
        return loss

    def nets(self) -> dict[str, Mlp]:
        return {
            "actor": self.actor,
            "actor_target": self.actor_target,
            "critic1": self.critic1,
            "critic1_target": self.critic1_target,
            "critic2": self.critic2,
            "critic2_target": self.critic2_target,
        }


@dataclass
class EvalResult:
    mean_return: float
    mean_final_position_error: float
    returns: list = field(default_factory=list)
    final_position_errors: list = field(default_factory=list)


def evaluate_policy(policy: Callable, env, episodes: int, seed: int) -> EvalResult:
    """Run deterministic episodes; observation noise stays on."""
    returns, errors = [], []
    for k in range(episodes):
        _, obs = env.reset(seed=seed + k)
        total, done = 0.0, False
        while not done:
            res = env.step(policy(obs))
            total += res.reward
            obs = res.observation
            done = res.terminated or res.truncated
        returns.append(total)
        errors.append(env.position_error())
    return EvalResult(float(np.mean(returns)), float(np.mean(errors)), returns, errors)


@dataclass
class CurveRow:
    step: int
    mean_return: float
    mean_pos_error: float
    critic_loss: float
    actor_loss: float


def train(
    env,
    cfg: Td3Config | None = None,
    eval_env=None,
    on_eval: Callable[[Td3Agent, CurveRow], None] | None = None,
) -> tuple[Td3Agent, list[CurveRow]]:
    """Interaction loop: uniform random actions during warmup, then noisy policy.

    One gradient step is taken per environment step once warmup is over.
    Time-limit truncation bootstraps; termination does not. Envs exposing
    ``set_difficulty`` get their reset distribution widened linearly over
    the ``curriculum_steps`` steps that follow warmup; ``eval_env`` is left untouched.
    """
    cfg = cfg or Td3Config()
    rng = np.random.default_rng(cfg.seed)
    agent = Td3Agent(env.obs_dim, env.act_dim, cfg, rng)
    if cfg.hover_bias and hasattr(env, "hover_action"):
        # start the actor at the env's nominal action instead of zero thrust
        agent.actor.layers[-1][1][:] = env.hover_action
        agent.actor_target.set_params(agent.actor.params)
    env.seed(int(rng.integers(2**31)))
    eval_seed = int(rng.integers(2**31))
    curve: list[CurveRow] = []
    staged = cfg.curriculum_steps > 0 and hasattr(env, "set_difficulty")

    def reset(step: int):
        if staged:
            env.set_difficulty((step - cfg.warmup_steps) / cfg.curriculum_steps)
        return env.reset()[1]

    obs = reset(0)
    critic_losses, actor_losses = [], []

    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.warmup_steps:
            action = rng.uniform(-1.0, 1.0, size=agent.act_dim)
        else:
            action = agent.select_action(obs, explore=True)
        res = env.step(action)
        agent.buffer.add(obs, action, res.reward, res.observation, res.terminated)
        obs = res.observation
        if res.terminated or res.truncated:
            obs = reset(step)

        if step > cfg.warmup_steps and len(agent.buffer) >= cfg.batch_size:
            stats = agent.train_step()
            critic_losses.append(stats.critic_loss)
            if stats.actor_loss is not None:
                actor_losses.append(stats.actor_loss)

        if (cfg.eval_every and step % cfg.eval_every == 0) or step == cfg.total_steps:
            if eval_env is not None:
                ev = evaluate_policy(agent.predict, eval_env, cfg.eval_episodes, eval_seed)
                ret, err = ev.mean_return, ev.mean_final_position_error
            else:
                ret = err = float("nan")
            row = CurveRow(
                step,
                ret,
                err,
                float(np.mean(critic_losses)) if critic_losses else float("nan"),
                float(np.mean(actor_losses)) if actor_losses else float("nan"),
            )
            critic_losses.clear()
            actor_losses.clear()
            curve.append(row)
            log.info(
                "step %d return %.2f pos_err %.3f critic %.4g actor %.4g",
                row.step, row.mean_return, row.mean_pos_error, row.critic_loss, row.actor_loss,
            )
            if on_eval is not None:
                on_eval(agent, row)
    return agent, curve
