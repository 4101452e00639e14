"""Continual-learning plugins riding on the strategy callback system.

EwcPlugin penalizes drift away from parameters that mattered for previously
trained experiences (one quadratic anchor per past experience); ReplayPlugin
keeps a cross-experience memory of transitions and mixes them into update
batches; NaivePlugin is the do-nothing baseline the other two are measured
against.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .nn import LengthMismatch
from .training.base import Step, StrategyPlugin
from .training.dqn import ReplayBuffer


@dataclass
class EwcState:
    """One anchor/Fisher pair per finished experience."""

    lam: float
    fisher_sample_count: int
    anchors: list[np.ndarray] = field(default_factory=list)
    fishers: list[np.ndarray] = field(default_factory=list)

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)


def ewc_penalty_and_grad(model, state: EwcState) -> tuple[float, np.ndarray]:
    """penalty = sum_k (lam/2) * sum_i F_k[i] * (theta[i] - theta*_k[i])^2
    and its exact gradient sum_k lam * F_k * (theta - theta*_k)."""
    params = model.flatten()
    penalty = 0.0
    grad = np.zeros_like(params)
    for anchor, fisher in zip(state.anchors, state.fishers):
        if anchor.size != params.size or fisher.size != params.size:
            raise LengthMismatch(
                f"EWC state sized {anchor.size}/{fisher.size} vs {params.size} params"
            )
        diff = params - anchor
        penalty += 0.5 * state.lam * float(np.sum(fisher * diff * diff))
        grad += state.lam * fisher * diff
    return penalty, grad


class EwcPlugin(StrategyPlugin):
    """Elastic weight consolidation, separate penalty per past experience.

    The diagonal Fisher is approximated by the mean squared per-sample
    gradient of the strategy's own loss (Huber TD error for DQN, policy
    log-likelihood for A2C) over the last fisher_sample_count transitions of
    the experience, evaluated at the anchor parameters. That stand-in for a
    true likelihood Fisher is the main approximation here.
    """

    def __init__(self, lam: float = 100.0, fisher_sample_count: int = 512):
        if lam < 0:
            raise ValueError("lam must be >= 0")
        if fisher_sample_count < 1:
            raise ValueError("fisher_sample_count must be >= 1")
        self.state = EwcState(float(lam), fisher_sample_count)
        self._recent: deque[Step] = deque(maxlen=fisher_sample_count)

    def before_training_exp(self, strategy) -> None:
        self._recent.clear()

    def after_rollout(self, strategy) -> None:
        self._recent.extend(strategy.rollout.steps())

    def before_update(self, strategy) -> None:
        if not self.state.anchors:
            return
        penalty, grad = ewc_penalty_and_grad(strategy.model, self.state)
        strategy.loss += penalty
        strategy.grad_accum += grad

    def after_training_exp(self, strategy) -> None:
        samples = list(self._recent)
        if len(samples) < self.state.fisher_sample_count:
            warnings.warn(
                f"EWC wanted {self.state.fisher_sample_count} transitions, "
                f"only {len(samples)} available; using all of them",
                stacklevel=2,
            )
        if not samples:
            return
        anchor = strategy.model.flatten()
        acc = np.zeros_like(anchor)
        for step in samples:
            grad = strategy.per_sample_loss_grad(step)
            acc += grad * grad
        self.state.anchors.append(anchor)
        self.state.fishers.append(acc / len(samples))
        self._recent.clear()

    # -- checkpoint integration -------------------------------------------

    def state_sections(self) -> dict[str, np.ndarray]:
        sections = {
            "ewc/meta": np.array(
                [self.state.lam, self.state.fisher_sample_count, self.state.n_anchors]
            )
        }
        for k, (anchor, fisher) in enumerate(zip(self.state.anchors, self.state.fishers)):
            sections[f"ewc/anchor_{k}"] = anchor
            sections[f"ewc/fisher_{k}"] = fisher
        return sections

    def load_state_sections(self, sections: dict[str, np.ndarray]) -> None:
        meta = sections["ewc/meta"]
        self.state = EwcState(float(meta[0]), int(meta[1]))
        self._recent = deque(maxlen=self.state.fisher_sample_count)
        for k in range(int(meta[2])):
            self.state.anchors.append(sections[f"ewc/anchor_{k}"])
            self.state.fishers.append(sections[f"ewc/fisher_{k}"])


class ReplayPlugin(StrategyPlugin):
    """Cross-experience replay: remember every gathered transition (FIFO ring
    of `capacity`) and, before each update, replace floor(mix_ratio * B) rows
    of the size-B update batch with memory steps, preferring steps whose
    task label differs from the experience being trained.

    Row replacement only applies to flat transition batches (lists of Steps,
    i.e. the DQN family). Strategies whose update consumes an ordered rollout
    (A2C) keep their batch untouched, since splicing foreign steps into an
    ordered sequence would corrupt the return computation.
    """

    def __init__(self, capacity: int = 10_000, mix_ratio: float = 0.5, seed: int = 0):
        if not 0.0 <= mix_ratio <= 1.0:
            raise ValueError("mix_ratio must lie in [0, 1]")
        self.memory = ReplayBuffer(capacity, seed=seed)
        self.mix_ratio = float(mix_ratio)
        self._rng = np.random.default_rng(seed + 1)

    def after_rollout(self, strategy) -> None:
        self.memory.extend(strategy.rollout.steps())

    def before_update(self, strategy) -> None:
        batch = strategy.update_batch
        if not isinstance(batch, list) or not batch or len(self.memory) == 0:
            return
        n_replace = int(self.mix_ratio * len(batch))
        if n_replace == 0:
            return
        current_label = strategy.experience.task_label if strategy.experience else None
        candidates = [s for s in self.memory.items() if s.task_label != current_label]
        if not candidates:
            candidates = self.memory.items()
        rows = self._rng.choice(len(batch), size=n_replace, replace=False)
        picks = self._rng.integers(0, len(candidates), size=n_replace)
        for row, pick in zip(rows, picks):
            batch[row] = candidates[pick]

    # -- checkpoint integration -------------------------------------------

    def state_sections(self) -> dict[str, np.ndarray]:
        steps = self.memory.items()
        sections = {
            "replay/meta": np.array(
                [self.memory.capacity, self.mix_ratio, len(steps)]
            )
        }
        if steps:
            sections["replay/obs"] = np.stack([s.obs for s in steps])
            sections["replay/next_obs"] = np.stack([s.next_obs for s in steps])
            sections["replay/actions"] = np.array([s.action for s in steps], dtype=np.float64)
            sections["replay/rewards"] = np.array([s.reward for s in steps])
            sections["replay/dones"] = np.array([float(s.done) for s in steps])
            sections["replay/task_labels"] = np.array(
                [s.task_label for s in steps], dtype=np.float64
            )
        return sections

    def load_state_sections(self, sections: dict[str, np.ndarray]) -> None:
        meta = sections["replay/meta"]
        self.memory = ReplayBuffer(int(meta[0]), seed=0)
        self.mix_ratio = float(meta[1])
        for i in range(int(meta[2])):
            self.memory.append(
                Step(
                    obs=sections["replay/obs"][i],
                    action=int(sections["replay/actions"][i]),
                    reward=float(sections["replay/rewards"][i]),
                    done=bool(sections["replay/dones"][i]),
                    next_obs=sections["replay/next_obs"][i],
                    task_label=int(sections["replay/task_labels"][i]),
                )
            )


class NaivePlugin(StrategyPlugin):
    """Explicit no-op baseline: plain sequential fine-tuning."""
