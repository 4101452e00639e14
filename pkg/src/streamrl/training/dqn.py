"""DQN with a target network, plus the DoubleDQN variant (double=True).

The model needs a "q_values" head. Every iteration the freshly gathered
rollout is inserted into the replay buffer first, then a uniform mini-batch
is drawn and used for a single Huber regression step toward

    y = r + gamma * (1 - done) * max_a Q_target(s', a)            (vanilla)
    y = r + gamma * (1 - done) * Q_target(s', argmax_a Q_online(s', a))
                                                                  (double)

The target network is a hard copy of the online network refreshed every
target_sync_period applied updates. While the buffer holds fewer than
batch_size transitions the update is skipped (the budget iteration is still
consumed, counted in updates_skipped).

Exploration is epsilon-greedy with epsilon annealed linearly from eps_start
to eps_end over the first eps_decay_fraction of the experience's expected
env steps, restarting at every experience. The replay buffer is also cleared
per experience: carrying transitions from a different task would silently
blend tasks, which is exactly the behavior the continual-learning plugins
are meant to control explicitly.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..benchmarks import RLExperience
from ..nn import huber_loss
from .base import InsufficientReplay, RLBaseStrategy, Rollout, Step, TrainingBudget


class ReplayBuffer:
    """Fixed-capacity ring of Steps with FIFO eviction and uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._storage: list[Step] = []
        self._next = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._storage)

    def append(self, step: Step) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(step)
        else:
            self._storage[self._next] = step
            self._next = (self._next + 1) % self.capacity

    def extend(self, steps) -> None:
        for step in steps:
            self.append(step)

    def sample(self, batch_size: int) -> list[Step]:
        if len(self._storage) < batch_size:
            raise InsufficientReplay(
                f"buffer holds {len(self._storage)} < batch_size {batch_size}"
            )
        indices = self._rng.integers(0, len(self._storage), size=batch_size)
        return [self._storage[i] for i in indices]

    def items(self) -> list[Step]:
        return list(self._storage)

    def clear(self) -> None:
        self._storage.clear()
        self._next = 0


def compute_dqn_targets(
    rewards: np.ndarray,
    dones: np.ndarray,
    q_next_target: np.ndarray,
    gamma: float,
    q_next_online: Optional[np.ndarray] = None,
    double: bool = False,
) -> np.ndarray:
    """Pure target computation, shared by the update and exposed for tests."""
    rewards = np.asarray(rewards, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    if double:
        if q_next_online is None:
            raise ValueError("double targets need q_next_online")
        best = np.argmax(q_next_online, axis=1)
        bootstrap = q_next_target[np.arange(len(rewards)), best]
    else:
        bootstrap = q_next_target.max(axis=1)
    return rewards + gamma * not_done * bootstrap


class DqnStrategy(RLBaseStrategy):
    def __init__(
        self,
        model,
        optimizer,
        budget: TrainingBudget,
        gamma: float = 0.99,
        batch_size: int = 32,
        replay_capacity: int = 10_000,
        target_sync_period: int = 100,
        double: bool = False,
        eps_start: float = 1.0,
        eps_end: float = 0.05,
        eps_decay_fraction: float = 0.1,
        action_seed: int = 0,
        replay_seed: int = 0,
        **kwargs,
    ):
        super().__init__(model, optimizer, budget, gamma=gamma, **kwargs)
        if "q_values" not in model.heads:
            raise ValueError("DQN model must expose a 'q_values' head")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if target_sync_period < 1:
            raise ValueError("target_sync_period must be >= 1")
        self.n_actions = model.heads["q_values"]
        self.batch_size = batch_size
        self.double = double
        self.target_sync_period = target_sync_period
        self.eps_start = float(eps_start)
        self.eps_end = float(eps_end)
        self.eps_decay_fraction = float(eps_decay_fraction)
        self.replay = ReplayBuffer(replay_capacity, seed=replay_seed)
        self.target_model = model.clone()
        self._action_rng = np.random.default_rng(action_seed)
        self._updates_since_sync = 0
        self._eps_decay_steps = 1

    # ------------------------------------------------------------------

    def expected_env_steps(self, experience: RLExperience) -> int:
        """Budgeted env steps for one experience. Exact under Steps(n); for
        Episodes(n) it treats each episode as one step, a deliberately crude
        lower bound (the schedule just anneals faster than intended)."""
        return (
            self.budget.updates_per_experience
            * self.budget.rollout_condition.n
            * experience.n_envs
        )

    @property
    def epsilon(self) -> float:
        frac = min(1.0, self.env_steps_this_exp / self._eps_decay_steps)
        return self.eps_start + (self.eps_end - self.eps_start) * frac

    def on_experience_start(self, experience: RLExperience) -> None:
        self.replay.clear()
        self._eps_decay_steps = max(
            1, int(round(self.eps_decay_fraction * self.expected_env_steps(experience)))
        )

    # ------------------------------------------------------------------

    def sample_rollout_action(self, obs_batch: np.ndarray) -> np.ndarray:
        q = self.model.forward(obs_batch)["q_values"]
        eps = self.epsilon
        actions = np.empty(len(q), dtype=np.int64)
        for i in range(len(q)):
            if self._action_rng.random() < eps:
                actions[i] = self._action_rng.integers(self.n_actions)
            else:
                actions[i] = int(np.argmax(q[i]))
        return actions

    def greedy_action(self, obs_batch: np.ndarray) -> np.ndarray:
        q = self.model.forward(obs_batch)["q_values"]
        return np.argmax(q, axis=1)

    def prepare_update_batch(self, rollout: Rollout) -> Optional[list[Step]]:
        self.replay.extend(rollout.steps())
        if len(self.replay) < self.batch_size:
            return None
        return self.replay.sample(self.batch_size)

    def apply_update(self, batch: Optional[list[Step]]) -> None:
        if batch is None:
            self.updates_skipped_this_exp += 1
            self._record("update_skipped", 1.0)
            return
        obs = np.stack([s.obs for s in batch])
        actions = np.array([s.action for s in batch], dtype=np.int64)
        rewards = np.array([s.reward for s in batch], dtype=np.float64)
        dones = np.array([s.done for s in batch], dtype=np.float64)
        next_obs = np.stack([s.next_obs for s in batch])

        q_next_target = self.target_model.forward(next_obs)["q_values"]
        q_next_online = self.model.forward(next_obs)["q_values"] if self.double else None
        targets = compute_dqn_targets(
            rewards, dones, q_next_target, self.gamma, q_next_online, self.double
        )

        q = self.model.forward(obs)["q_values"]
        rows = np.arange(len(batch))
        base_loss, dloss = huber_loss(q[rows, actions], targets)
        out_grad = np.zeros_like(q)
        out_grad[rows, actions] = dloss
        grads = self.model.backward({"q_values": out_grad}) + self.grad_accum
        self.model.unflatten(self.optimizer.step(self.model.flatten(), grads))

        self.loss += base_loss
        self.updates_applied_this_exp += 1
        self._updates_since_sync += 1
        if self._updates_since_sync >= self.target_sync_period:
            self.target_model.copy_params_from(self.model)
            self._updates_since_sync = 0
        self._record("loss", self.loss)
        self._record("epsilon", self.epsilon)

    def per_sample_loss_grad(self, step: Step) -> np.ndarray:
        """Gradient of the Huber TD loss on one transition (current target
        net supplies the bootstrap)."""
        q_next_target = self.target_model.forward(step.next_obs[None, :])["q_values"]
        q_next_online = (
            self.model.forward(step.next_obs[None, :])["q_values"] if self.double else None
        )
        target = compute_dqn_targets(
            np.array([step.reward]),
            np.array([float(step.done)]),
            q_next_target,
            self.gamma,
            q_next_online,
            self.double,
        )
        q = self.model.forward(step.obs[None, :])["q_values"]
        _, dloss = huber_loss(q[np.arange(1), [step.action]], target)
        out_grad = np.zeros_like(q)
        out_grad[0, step.action] = dloss[0]
        return self.model.backward({"q_values": out_grad})
