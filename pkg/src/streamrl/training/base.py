"""Rollout/update training skeleton shared by all strategies.

A strategy owns a model, an optimizer and a TrainingBudget. train() walks the
scenario's train stream; for every experience it runs

    { collect rollout ; prepare batch ; update } x updates_per_experience

firing plugin hooks around each stage:

    before_training
      (before_training_exp
         (before_rollout, after_rollout, before_update, after_update) x U
       after_training_exp) x E
    after_training

plus before_eval_exp/after_eval_exp around each evaluation experience.
Plugins see the live strategy object: between before_update and after_update
they may add penalties to `strategy.loss` and analytic gradient contributions
to `strategy.grad_accum`, both of which the concrete strategy folds into its
optimizer step. `strategy.update_batch` is already prepared when
before_update fires so plugins can rewrite it in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..benchmarks import RLExperience, RLScenario
from ..core_env import deserialize_obs
from ..evaluation import MetricsCollector
from ..vec_env import VectorizedEnv

HOOKS = (
    "before_training",
    "before_training_exp",
    "before_rollout",
    "after_rollout",
    "before_update",
    "after_update",
    "after_training_exp",
    "after_training",
    "before_eval_exp",
    "after_eval_exp",
)


class EmptyStream(ValueError):
    """train() was given a scenario with no training experiences."""


class EmptyRollout(ValueError):
    """An update was asked to consume a rollout with no steps."""


class InvalidEpisodeCount(ValueError):
    """evaluate() needs at least one episode per experience."""


class AppendAfterMaterialize(RuntimeError):
    """Rollout batch views were built; the step lists are frozen."""


class InsufficientReplay(RuntimeError):
    """Not enough stored transitions to draw a mini-batch."""


@dataclass(eq=False)
class Step:
    """One transition. next_obs is the true successor state: when the
    vectorized env auto-reset, this is the terminal observation rather than
    the first observation of the following episode."""

    obs: np.ndarray
    action: int
    reward: float
    done: bool
    next_obs: np.ndarray
    task_label: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.reward):
            raise ValueError(f"non-finite reward {self.reward!r}")
        if np.shape(self.obs) != np.shape(self.next_obs):
            raise ValueError(
                f"obs shape {np.shape(self.obs)} != next_obs shape {np.shape(self.next_obs)}"
            )


class Rollout:
    """Per-actor step lists, optimized for appends.

    Batch views (obs_batch, actions, rewards, dones, next_obs_batch) are
    built lazily on first access in time-major order (all actors at t=0, then
    t=1, ...); once built, further appends raise AppendAfterMaterialize.
    """

    def __init__(self, n_actors: int):
        if n_actors < 1:
            raise ValueError("n_actors must be >= 1")
        self.n_actors = n_actors
        self.per_actor: list[list[Step]] = [[] for _ in range(n_actors)]
        self._views: Optional[tuple] = None

    def append(self, actor_index: int, step: Step) -> None:
        if self._views is not None:
            raise AppendAfterMaterialize("batch views already materialized")
        self.per_actor[actor_index].append(step)

    def __len__(self) -> int:
        return sum(len(steps) for steps in self.per_actor)

    @property
    def n_steps(self) -> int:
        """Vectorized steps taken (length of each per-actor list)."""
        return len(self.per_actor[0])

    def steps(self) -> list[Step]:
        """Flat time-major list; does not freeze the rollout."""
        return [
            self.per_actor[a][t] for t in range(self.n_steps) for a in range(self.n_actors)
        ]

    def _materialize(self) -> tuple:
        if self._views is None:
            flat = self.steps()
            if not flat:
                raise EmptyRollout("cannot materialize an empty rollout")
            self._views = (
                np.stack([s.obs for s in flat]),
                np.array([s.action for s in flat], dtype=np.int64),
                np.array([s.reward for s in flat], dtype=np.float64),
                np.array([s.done for s in flat], dtype=bool),
                np.stack([s.next_obs for s in flat]),
            )
        return self._views

    @property
    def obs_batch(self) -> np.ndarray:
        return self._materialize()[0]

    @property
    def actions(self) -> np.ndarray:
        return self._materialize()[1]

    @property
    def rewards(self) -> np.ndarray:
        return self._materialize()[2]

    @property
    def dones(self) -> np.ndarray:
        return self._materialize()[3]

    @property
    def next_obs_batch(self) -> np.ndarray:
        return self._materialize()[4]


@dataclass(frozen=True)
class Steps:
    """Roll for n vectorized env steps (n transitions per actor)."""

    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("Steps(n) needs n >= 1")


@dataclass(frozen=True)
class Episodes:
    """Roll until n episodes have completed, summed across actors."""

    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("Episodes(n) needs n >= 1")


@dataclass(frozen=True)
class TrainingBudget:
    updates_per_experience: int
    rollout_condition: Steps | Episodes

    def __post_init__(self) -> None:
        if self.updates_per_experience < 1:
            raise ValueError("updates_per_experience must be >= 1")


class StrategyPlugin:
    """No-op callbacks; subclasses override the hooks they care about.

    Every hook receives the strategy so plugins can read/mutate its public
    state (model, optimizer, rollout, update_batch, loss, grad_accum,
    experience, ...). Plugins run in registration order.
    """

    def before_training(self, strategy) -> None:
        pass

    def before_training_exp(self, strategy) -> None:
        pass

    def before_rollout(self, strategy) -> None:
        pass

    def after_rollout(self, strategy) -> None:
        pass

    def before_update(self, strategy) -> None:
        pass

    def after_update(self, strategy) -> None:
        pass

    def after_training_exp(self, strategy) -> None:
        pass

    def after_training(self, strategy) -> None:
        pass

    def before_eval_exp(self, strategy) -> None:
        pass

    def after_eval_exp(self, strategy) -> None:
        pass


@dataclass(frozen=True)
class EvalResult:
    experience_index: int
    task_label: int
    mean_return: float
    std_return: float
    mean_length: float


@dataclass(frozen=True)
class ExperienceReport:
    experience_index: int
    task_label: int
    env_steps: int
    updates_applied: int
    updates_skipped: int
    episodes_completed: int
    episode_returns: tuple[float, ...]
    final_loss: float

    @property
    def mean_episode_return(self) -> float:
        if not self.episode_returns:
            return math.nan
        return sum(self.episode_returns) / len(self.episode_returns)


@dataclass(frozen=True)
class TrainingReport:
    experiences: tuple[ExperienceReport, ...]
    evals: tuple[tuple[EvalResult, ...], ...]
    total_env_steps: int
    total_updates: int


class RLBaseStrategy:
    """Shared engine. Subclasses implement action sampling and the update."""

    def __init__(
        self,
        model,
        optimizer,
        budget: TrainingBudget,
        gamma: float = 0.99,
        env_seed: int = 0,
        eval_env_seed: int = 10_000,
        metrics: Optional[MetricsCollector] = None,
        vec_mode: str = "serial",
    ):
        if not 0.0 <= gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
        self.model = model
        self.optimizer = optimizer
        self.budget = budget
        self.gamma = float(gamma)
        self.env_seed = env_seed
        self.eval_env_seed = eval_env_seed
        self.metrics = metrics
        self.vec_mode = vec_mode
        self.plugins: list[StrategyPlugin] = []
        # state visible to plugins
        self.experience: Optional[RLExperience] = None
        self.eval_experience: Optional[RLExperience] = None
        self.venv: Optional[VectorizedEnv] = None
        self.current_obs: Optional[np.ndarray] = None
        self.rollout: Optional[Rollout] = None
        self.update_batch = None
        self.loss = 0.0
        self.grad_accum: Optional[np.ndarray] = None
        self.training = False
        self.update_index = 0
        self.global_update_index = 0
        self.env_steps_this_exp = 0
        self.total_env_steps = 0
        self.updates_applied_this_exp = 0
        self.updates_skipped_this_exp = 0
        self._ep_return: Optional[np.ndarray] = None
        self._ep_length: Optional[np.ndarray] = None
        self._exp_episode_returns: list[float] = []

    # ------------------------------------------------------------------
    # subclass surface
    # ------------------------------------------------------------------

    def sample_rollout_action(self, obs_batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def greedy_action(self, obs_batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def prepare_update_batch(self, rollout: Rollout):
        """Builds the batch the next update will consume (plugins may then
        rewrite it in their before_update hook)."""
        raise NotImplementedError

    def apply_update(self, batch) -> None:
        raise NotImplementedError

    def per_sample_loss_grad(self, step: Step) -> np.ndarray:
        """Gradient of this strategy's own per-sample loss at the current
        params, as a flat vector (consumed by regularization plugins)."""
        raise NotImplementedError

    def on_experience_start(self, experience: RLExperience) -> None:
        pass

    def on_experience_end(self, experience: RLExperience) -> None:
        pass

    # ------------------------------------------------------------------
    # engine
    # ------------------------------------------------------------------

    def _fire(self, hook: str) -> None:
        for plugin in self.plugins:
            getattr(plugin, hook)(self)

    def _record(self, name: str, value: float) -> None:
        if self.metrics is not None:
            self.metrics.record_custom(name, value)

    def collect_rollout(self, venv: VectorizedEnv, condition: Steps | Episodes) -> Rollout:
        """Gathers transitions until the condition is met. The observation
        carried in self.current_obs persists across calls, so consecutive
        rollouts within an experience are seamless."""
        rollout = Rollout(venv.n_actors)
        vec_steps = 0
        episodes_finished = 0
        while True:
            actions = self.sample_rollout_action(self.current_obs)
            obs, rewards, dones, infos = venv.step([int(a) for a in actions])
            for a in range(venv.n_actors):
                next_obs = obs[a]
                if dones[a]:
                    next_obs = deserialize_obs(infos[a]["terminal_obs"])
                rollout.append(
                    a,
                    Step(
                        obs=np.array(self.current_obs[a]),
                        action=int(actions[a]),
                        reward=float(rewards[a]),
                        done=bool(dones[a]),
                        next_obs=next_obs,
                        task_label=self.experience.task_label,
                    ),
                )
                self._ep_return[a] += rewards[a]
                self._ep_length[a] += 1
                if dones[a]:
                    episodes_finished += 1
                    self._exp_episode_returns.append(float(self._ep_return[a]))
                    if self.metrics is not None:
                        self.metrics.record_episode(
                            float(self._ep_return[a]), int(self._ep_length[a])
                        )
                    self._ep_return[a] = 0.0
                    self._ep_length[a] = 0
            self.current_obs = obs
            vec_steps += 1
            self.env_steps_this_exp += venv.n_actors
            self.total_env_steps += venv.n_actors
            if self.metrics is not None:
                self.metrics.global_step = self.total_env_steps
            if isinstance(condition, Steps):
                if vec_steps >= condition.n:
                    break
            else:
                if episodes_finished >= condition.n:
                    break
        return rollout

    def train(
        self,
        scenario: RLScenario,
        plugins: Optional[Sequence[StrategyPlugin]] = None,
        eval_stream: Optional[Sequence[RLExperience]] = None,
        eval_episodes: int = 10,
    ) -> TrainingReport:
        if plugins is not None:
            self.plugins = list(plugins)
        if scenario.n_experiences == 0:
            raise EmptyStream("scenario has no training experiences")
        self.training = True
        self._fire("before_training")
        reports: list[ExperienceReport] = []
        evals: list[tuple[EvalResult, ...]] = []
        for exp in scenario.train_stream:
            self.experience = exp
            if self.metrics is not None:
                self.metrics.phase = "train"
                self.metrics.experience_index = exp.experience_index
                self.metrics.reset_phase_windows("train")
            venv = VectorizedEnv(
                exp.env_factory, exp.n_envs, base_seed=self.env_seed, mode=self.vec_mode
            )
            self.venv = venv
            try:
                self.current_obs = venv.reset()
                self._ep_return = np.zeros(exp.n_envs)
                self._ep_length = np.zeros(exp.n_envs, dtype=np.int64)
                self._exp_episode_returns = []
                self.env_steps_this_exp = 0
                self.updates_applied_this_exp = 0
                self.updates_skipped_this_exp = 0
                self.on_experience_start(exp)
                self._fire("before_training_exp")
                for u in range(self.budget.updates_per_experience):
                    self.update_index = u
                    self._fire("before_rollout")
                    self.rollout = self.collect_rollout(venv, self.budget.rollout_condition)
                    self._fire("after_rollout")
                    self.loss = 0.0
                    self.grad_accum = np.zeros(self.model.param_count)
                    self.update_batch = self.prepare_update_batch(self.rollout)
                    self._fire("before_update")
                    self.apply_update(self.update_batch)
                    self._fire("after_update")
                    self.global_update_index += 1
                self._fire("after_training_exp")
                self.on_experience_end(exp)
            finally:
                venv.close()
                self.venv = None
            reports.append(
                ExperienceReport(
                    experience_index=exp.experience_index,
                    task_label=exp.task_label,
                    env_steps=self.env_steps_this_exp,
                    updates_applied=self.updates_applied_this_exp,
                    updates_skipped=self.updates_skipped_this_exp,
                    episodes_completed=len(self._exp_episode_returns),
                    episode_returns=tuple(self._exp_episode_returns),
                    final_loss=float(self.loss),
                )
            )
            if eval_stream is not None:
                evals.append(tuple(self.evaluate(eval_stream, eval_episodes)))
        self.training = False
        self._fire("after_training")
        return TrainingReport(
            experiences=tuple(reports),
            evals=tuple(evals),
            total_env_steps=self.total_env_steps,
            total_updates=self.global_update_index,
        )

    def evaluate(
        self, eval_stream: Sequence[RLExperience], n_episodes: int
    ) -> list[EvalResult]:
        """Greedy policy, no learning: n_episodes per eval experience with a
        single actor seeded from eval_env_seed."""
        if n_episodes < 1:
            raise InvalidEpisodeCount(f"n_episodes must be >= 1, got {n_episodes}")
        saved = None
        if self.metrics is not None:
            saved = (self.metrics.phase, self.metrics.experience_index)
        results: list[EvalResult] = []
        for exp in eval_stream:
            self.eval_experience = exp
            self._fire("before_eval_exp")
            if self.metrics is not None:
                self.metrics.phase = "eval"
                self.metrics.experience_index = exp.experience_index
                self.metrics.reset_phase_windows("eval")
            returns: list[float] = []
            lengths: list[int] = []
            with VectorizedEnv(exp.env_factory, 1, base_seed=self.eval_env_seed) as venv:
                obs = venv.reset()
                ep_return, ep_length = 0.0, 0
                while len(returns) < n_episodes:
                    actions = self.greedy_action(obs)
                    obs, rewards, dones, _ = venv.step([int(actions[0])])
                    ep_return += float(rewards[0])
                    ep_length += 1
                    if dones[0]:
                        returns.append(ep_return)
                        lengths.append(ep_length)
                        if self.metrics is not None:
                            self.metrics.record_episode(ep_return, ep_length)
                        ep_return, ep_length = 0.0, 0
            result = EvalResult(
                experience_index=exp.experience_index,
                task_label=exp.task_label,
                mean_return=float(np.mean(returns)),
                std_return=float(np.std(returns)),
                mean_length=float(np.mean(lengths)),
            )
            results.append(result)
            if self.metrics is not None:
                self.metrics.record_custom("eval_return", result.mean_return)
                self.metrics.record_custom("eval_return_std", result.std_return)
                self.metrics.record_custom("eval_length", result.mean_length)
            self._fire("after_eval_exp")
        if saved is not None:
            self.metrics.phase, self.metrics.experience_index = saved
        self.eval_experience = None
        return results


def train(
    strategy: RLBaseStrategy,
    scenario: RLScenario,
    plugins: Optional[Sequence[StrategyPlugin]] = None,
    eval_stream: Optional[Sequence[RLExperience]] = None,
    eval_episodes: int = 10,
) -> TrainingReport:
    return strategy.train(scenario, plugins, eval_stream=eval_stream, eval_episodes=eval_episodes)


def evaluate(
    strategy: RLBaseStrategy, eval_stream: Sequence[RLExperience], n_episodes: int
) -> list[EvalResult]:
    return strategy.evaluate(eval_stream, n_episodes)
