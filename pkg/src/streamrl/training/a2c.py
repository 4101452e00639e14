"""Advantage actor-critic over a shared body with policy and value heads.

Each update consumes the rollout it just gathered (no replay). Per actor,
n-step returns are computed backward with the value head bootstrapping the
tail when the last step did not terminate:

    R_T = 0 if done_T else V(next_obs_T)
    R_t = r_t + gamma * R_{t+1}        (R reset to 0 across episode ends)

The single combined loss is

    mean(-log pi(a|s) * A) + value_coef * MSE(V(s), R) - entropy_coef * H(pi)

with A = R - V(s) treated as a constant, and one backward/optimizer step per
rollout. The model needs "policy_logits" and "value" heads.
"""

from __future__ import annotations

import numpy as np

from ..nn import entropy_loss, mse_loss, policy_gradient_loss, softmax
from .base import EmptyRollout, RLBaseStrategy, Rollout, Step, TrainingBudget


def compute_nstep_returns(
    rewards, dones, bootstrap_value: float, gamma: float
) -> np.ndarray:
    """Discounted returns for one actor's ordered step sequence. The
    bootstrap seeds the recursion and a done at position t cuts the chain so
    nothing leaks across auto-reset episode boundaries."""
    rewards = np.asarray(rewards, dtype=np.float64)
    returns = np.empty_like(rewards)
    acc = float(bootstrap_value)
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            acc = 0.0
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


class A2cStrategy(RLBaseStrategy):
    def __init__(
        self,
        model,
        optimizer,
        budget: TrainingBudget,
        gamma: float = 0.99,
        value_coef: float = 0.5,
        entropy_coef: float = 0.01,
        action_seed: int = 0,
        **kwargs,
    ):
        super().__init__(model, optimizer, budget, gamma=gamma, **kwargs)
        for head in ("policy_logits", "value"):
            if head not in model.heads:
                raise ValueError(f"A2C model must expose a {head!r} head")
        if model.heads["value"] != 1:
            raise ValueError("the 'value' head must have width 1")
        self.n_actions = model.heads["policy_logits"]
        self.value_coef = float(value_coef)
        self.entropy_coef = float(entropy_coef)
        self._action_rng = np.random.default_rng(action_seed)

    def sample_rollout_action(self, obs_batch: np.ndarray) -> np.ndarray:
        logits = self.model.forward(obs_batch)["policy_logits"]
        probs = softmax(logits)
        actions = np.empty(len(probs), dtype=np.int64)
        for i in range(len(probs)):
            actions[i] = self._action_rng.choice(self.n_actions, p=probs[i])
        return actions

    def greedy_action(self, obs_batch: np.ndarray) -> np.ndarray:
        logits = self.model.forward(obs_batch)["policy_logits"]
        return np.argmax(logits, axis=1)

    def prepare_update_batch(self, rollout: Rollout) -> Rollout:
        return rollout

    def apply_update(self, rollout: Rollout) -> None:
        if rollout is None or len(rollout) == 0:
            raise EmptyRollout("A2C update needs a non-empty rollout")

        # Bootstrap values for every actor's final step, before the main
        # forward pass (forward() caches activations for backward()).
        last_next = np.stack([steps[-1].next_obs for steps in rollout.per_actor])
        tail_values = self.model.forward(last_next)["value"][:, 0]

        flat_steps: list[Step] = []
        returns_chunks = []
        for a, steps in enumerate(rollout.per_actor):
            flat_steps.extend(steps)
            returns_chunks.append(
                compute_nstep_returns(
                    [s.reward for s in steps],
                    [s.done for s in steps],
                    tail_values[a],
                    self.gamma,
                )
            )
        returns = np.concatenate(returns_chunks)
        obs = np.stack([s.obs for s in flat_steps])
        actions = np.array([s.action for s in flat_steps], dtype=np.int64)

        out = self.model.forward(obs)
        logits = out["policy_logits"]
        values = out["value"][:, 0]
        advantages = returns - values

        pg_loss, pg_grad = policy_gradient_loss(logits, actions, advantages)
        value_loss, value_grad = mse_loss(values, returns)
        entropy, entropy_grad = entropy_loss(logits)
        base_loss = pg_loss + self.value_coef * value_loss - self.entropy_coef * entropy

        grads = self.model.backward(
            {
                "policy_logits": pg_grad - self.entropy_coef * entropy_grad,
                "value": (self.value_coef * value_grad)[:, None],
            }
        )
        grads = grads + self.grad_accum
        self.model.unflatten(self.optimizer.step(self.model.flatten(), grads))

        self.loss += base_loss
        self.updates_applied_this_exp += 1
        self._record("loss", self.loss)
        self._record("entropy", entropy)

    def per_sample_loss_grad(self, step: Step) -> np.ndarray:
        """Gradient of -log pi(a|s) for one step (policy head only)."""
        logits = self.model.forward(step.obs[None, :])["policy_logits"]
        _, grad = policy_gradient_loss(
            logits, np.array([step.action]), np.array([1.0])
        )
        return self.model.backward({"policy_logits": grad})
