"""Task/scene streaming on top of gridworld scenes.

A Task bundles what varies between objectives — the reward function, the
goal test, and the action space — while the environment object stays the
same. A TaskIterator schedules tasks over step/episode durations, a
SceneManager swaps GridScenes under a policy (possibly mid-episode), and
task_stream_benchmark_generator turns both configs into an RLScenario whose
experiences are all views over one shared TaskStreamEnv instance.

Because the stream is one continuous interaction, the shared env's reset()
is soft: a reset request that arrives while an episode is still running
(i.e. at an experience boundary that landed mid-episode) keeps the agent
exactly where it is. Scene swaps never rebuild the env; if the agent's cell
is invalid in the new scene it is moved to that scene's start.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .benchmarks import RLExperience, RLScenario
from .core_env import BoxSpace, Discrete, Environment, Space, StepResult
from .envs import GRID_MOVES, GridScene, one_hot_cell


class TaskStreamConfigError(ValueError):
    """Invalid task/scene stream configuration; message names the culprit."""


class StreamExhausted(RuntimeError):
    """The task schedule has no further tasks (or segments) to serve."""


class GridState(NamedTuple):
    """World state handed to reward_fn/goal_test: where the agent is and
    which scene it is in."""

    position: tuple[int, int]
    scene: GridScene


@dataclass(frozen=True)
class Task:
    name: str
    reward_fn: Callable[[GridState, int, GridState], float]
    goal_test: Callable[[GridState], bool]
    action_space: Space
    on_activate: Optional[Callable[[object], None]] = None


@dataclass(frozen=True)
class MaxSteps:
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TaskStreamConfigError("MaxSteps duration must be >= 1")


@dataclass(frozen=True)
class MaxEpisodes:
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TaskStreamConfigError("MaxEpisodes duration must be >= 1")


class TaskIterator:
    """Serves the active task given monotone step/episode counters.

    Each task runs for its own duration; when the last task's duration is
    exhausted the stream ends (no wrap-around). on_activate of a newly
    active task fires with the bound environment (None if unbound).
    """

    def __init__(
        self,
        tasks: Sequence[Task],
        durations: Sequence[MaxSteps | MaxEpisodes],
        env: Optional[object] = None,
    ):
        if not tasks:
            raise TaskStreamConfigError("TaskIterator needs at least one task")
        if len(tasks) != len(durations):
            raise TaskStreamConfigError(
                f"{len(tasks)} tasks but {len(durations)} durations"
            )
        self.tasks = list(tasks)
        self.durations = list(durations)
        self.env = env
        self.cursor = 0
        self._base_steps = 0
        self._base_episodes = 0

    @property
    def active_task(self) -> Task:
        return self.tasks[self.cursor]

    def current_task(self, steps_taken: int, episodes_done: int) -> tuple[Task, bool]:
        changed = False
        while True:
            duration = self.durations[self.cursor]
            if isinstance(duration, MaxSteps):
                used = steps_taken - self._base_steps
            else:
                used = episodes_done - self._base_episodes
            if used < duration.n:
                break
            if self.cursor == len(self.tasks) - 1:
                raise StreamExhausted(
                    f"task schedule exhausted after {steps_taken} steps / "
                    f"{episodes_done} episodes"
                )
            if isinstance(duration, MaxSteps):
                self._base_steps += duration.n
            else:
                self._base_episodes += duration.n
            self.cursor += 1
            changed = True
            task = self.tasks[self.cursor]
            if task.on_activate is not None:
                task.on_activate(self.env)
        return self.tasks[self.cursor], changed


class SwapEvent(enum.Enum):
    TASK_CHANGED = "task_changed"
    EPISODE_ENDED = "episode_ended"
    STEP_TAKEN = "step_taken"


@dataclass(frozen=True)
class OnTaskChange:
    pass


@dataclass(frozen=True)
class EveryNEpisodes:
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TaskStreamConfigError("EveryNEpisodes needs n >= 1")


@dataclass(frozen=True)
class EveryNSteps:
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TaskStreamConfigError("EveryNSteps needs n >= 1")


class SceneManager:
    """Cycles through scenes whenever the configured event fires often
    enough. All scenes must share one grid size so observations keep their
    shape across swaps."""

    def __init__(
        self,
        scenes: Sequence[GridScene],
        swap_policy: OnTaskChange | EveryNEpisodes | EveryNSteps,
    ):
        if not scenes:
            raise TaskStreamConfigError("SceneManager needs at least one scene")
        first = scenes[0]
        for i, scene in enumerate(scenes):
            if (scene.width, scene.height) != (first.width, first.height):
                raise TaskStreamConfigError(
                    f"scene {i} is {scene.width}x{scene.height}, expected "
                    f"{first.width}x{first.height} (all scenes must match)"
                )
        self.scenes = list(scenes)
        self.swap_policy = swap_policy
        self.active_index = 0
        self._count = 0

    @property
    def active_scene(self) -> GridScene:
        return self.scenes[self.active_index]

    def maybe_swap(self, event: SwapEvent) -> tuple[GridScene, bool]:
        policy = self.swap_policy
        should = False
        if isinstance(policy, OnTaskChange):
            should = event is SwapEvent.TASK_CHANGED
        elif isinstance(policy, EveryNEpisodes):
            if event is SwapEvent.EPISODE_ENDED:
                self._count += 1
                if self._count >= policy.n:
                    self._count = 0
                    should = True
        else:
            if event is SwapEvent.STEP_TAKEN:
                self._count += 1
                if self._count >= policy.n:
                    self._count = 0
                    should = True
        if should:
            self.active_index = (self.active_index + 1) % len(self.scenes)
        return self.scenes[self.active_index], should


class TaskStreamEnv(Environment):
    """Gridworld whose reward/termination are delegated to the active Task
    and whose scene can be replaced in flight.

    reset() only restarts an episode when there is none running; an
    experience boundary that lands mid-episode therefore keeps the agent's
    position, per the stream-continuity contract. Episode length is capped
    by the active scene's max_steps.
    """

    def __init__(self, scene: GridScene, task: Task):
        self._scene = scene
        self._task = task
        self.action_space = task.action_space
        n = scene.width * scene.height
        self.observation_space = BoxSpace(low=np.zeros(n), high=np.ones(n), shape=(n,))
        self._pos = scene.start
        self._steps = 0
        if task.on_activate is not None:
            task.on_activate(self)

    @property
    def active_task(self) -> Task:
        return self._task

    @property
    def active_scene(self) -> GridScene:
        return self._scene

    @property
    def position(self) -> tuple[int, int]:
        return self._pos

    def set_active_task(self, task: Task) -> None:
        if task is self._task:
            return
        self._task = task
        self.action_space = task.action_space
        if task.on_activate is not None:
            task.on_activate(self)

    def set_active_scene(self, scene: GridScene) -> None:
        if scene is self._scene:
            return
        if (scene.width, scene.height) != (self._scene.width, self._scene.height):
            raise TaskStreamConfigError(
                "replacement scene must match the current grid size"
            )
        self._scene = scene
        if self._started and not self._done:
            # mid-episode swap: keep the agent where it is when possible
            if not scene.passable(self._pos):
                self._pos = scene.start

    def _obs(self) -> np.ndarray:
        return one_hot_cell(self._pos, self._scene.width, self._scene.height)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if self._started and not self._done:
            return self._obs()
        self._pos = self._scene.start
        self._steps = 0
        self._done = False
        self._started = True
        return self._obs()

    def step(self, action) -> StepResult:
        self._require_active()
        self._check_action(action)
        state = GridState(self._pos, self._scene)
        dx, dy = GRID_MOVES[int(action)]
        target = (self._pos[0] + dx, self._pos[1] + dy)
        if self._scene.passable(target):
            self._pos = target
        next_state = GridState(self._pos, self._scene)
        reward = float(self._task.reward_fn(state, int(action), next_state))
        self._steps += 1
        done = bool(self._task.goal_test(next_state)) or self._steps >= self._scene.max_steps
        self._done = done
        return StepResult(obs=self._obs(), reward=reward, done=done)


# ---------------------------------------------------------------------------
# Task type registry: maps config entries onto Task objects with strict
# parameter validation (unknown keys are errors).
# ---------------------------------------------------------------------------


def _make_reach_goal(step_reward: float, goal_reward: float) -> tuple:
    def reward_fn(state: GridState, action: int, next_state: GridState) -> float:
        if next_state.position == next_state.scene.goal:
            return goal_reward
        return step_reward

    def goal_test(state: GridState) -> bool:
        return state.position == state.scene.goal

    return reward_fn, goal_test


def _make_survive(step_reward: float) -> tuple:
    def reward_fn(state: GridState, action: int, next_state: GridState) -> float:
        return step_reward

    def goal_test(state: GridState) -> bool:
        return False

    return reward_fn, goal_test


TASK_TYPES: dict[str, dict[str, float]] = {
    "reach_goal": {"step_reward": -0.01, "goal_reward": 1.0},
    "survive": {"step_reward": 0.01},
}


def build_task(type_name: str, name: str = "", **params) -> Task:
    if type_name not in TASK_TYPES:
        raise TaskStreamConfigError(
            f"unknown task type {type_name!r}; available: {sorted(TASK_TYPES)}"
        )
    schema = TASK_TYPES[type_name]
    unknown = sorted(set(params) - set(schema))
    if unknown:
        raise TaskStreamConfigError(
            f"task type {type_name!r} got unknown parameter(s) {unknown}; "
            f"declared: {sorted(schema)}"
        )
    values = {**schema, **{k: float(v) for k, v in params.items()}}
    if type_name == "reach_goal":
        reward_fn, goal_test = _make_reach_goal(values["step_reward"], values["goal_reward"])
    else:
        reward_fn, goal_test = _make_survive(values["step_reward"])
    return Task(
        name=name or type_name,
        reward_fn=reward_fn,
        goal_test=goal_test,
        action_space=Discrete(4),
    )


def task_from_config(entry: dict) -> tuple[Task, MaxSteps | MaxEpisodes]:
    """One config-file task entry -> (Task, duration). Entry layout:
    {name, type, duration: {episodes: n} | {steps: n}, params: {...}}."""
    allowed = {"name", "type", "duration", "params"}
    unknown = sorted(set(entry) - allowed)
    if unknown:
        raise TaskStreamConfigError(f"task entry has unknown key(s) {unknown}")
    for key in ("type", "duration"):
        if key not in entry:
            raise TaskStreamConfigError(f"task entry missing required key {key!r}")
    duration_map = entry["duration"]
    if not isinstance(duration_map, dict) or len(duration_map) != 1:
        raise TaskStreamConfigError(
            "duration must be a one-key map: {episodes: n} or {steps: n}"
        )
    (unit, n), = duration_map.items()
    if unit == "episodes":
        duration: MaxSteps | MaxEpisodes = MaxEpisodes(int(n))
    elif unit == "steps":
        duration = MaxSteps(int(n))
    else:
        raise TaskStreamConfigError(f"unknown duration unit {unit!r}")
    task = build_task(entry["type"], entry.get("name", ""), **entry.get("params", {}))
    return task, duration


# ---------------------------------------------------------------------------
# Generator: enumerate (task, scene) segments and wrap them as experiences
# over one shared environment instance.
# ---------------------------------------------------------------------------


def _enumerate_segments(
    durations: Sequence[MaxSteps | MaxEpisodes],
    scenes: Sequence[GridScene],
    swap_policy: OnTaskChange | EveryNEpisodes | EveryNSteps,
) -> list[tuple[int, int, int]]:
    """Walk the schedule unit by unit and return (task_idx, scene_idx,
    length) segments. Durations must share one unit, and the swap policy
    must count that same unit (OnTaskChange counts neither)."""
    episode_based = all(isinstance(d, MaxEpisodes) for d in durations)
    step_based = all(isinstance(d, MaxSteps) for d in durations)
    if not (episode_based or step_based):
        raise TaskStreamConfigError(
            "all task durations must use the same unit (all episodes or all steps)"
        )
    if episode_based and isinstance(swap_policy, EveryNSteps):
        raise TaskStreamConfigError(
            "EveryNSteps swap policy cannot be scheduled against episode durations"
        )
    if step_based and isinstance(swap_policy, EveryNEpisodes):
        raise TaskStreamConfigError(
            "EveryNEpisodes swap policy cannot be scheduled against step durations"
        )
    unit_event = SwapEvent.EPISODE_ENDED if episode_based else SwapEvent.STEP_TAKEN
    manager = SceneManager(scenes, swap_policy)
    total = sum(d.n for d in durations)
    task_idx, remaining = 0, durations[0].n
    segments: list[tuple[int, int, int]] = []
    seg_task, seg_scene, seg_len = 0, manager.active_index, 0
    for i in range(total):
        seg_len += 1
        remaining -= 1
        events = [unit_event]
        if remaining == 0 and task_idx < len(durations) - 1:
            task_idx += 1
            remaining = durations[task_idx].n
            events.append(SwapEvent.TASK_CHANGED)
        for event in events:
            manager.maybe_swap(event)
        now = (task_idx, manager.active_index)
        if i < total - 1 and now != (seg_task, seg_scene):
            segments.append((seg_task, seg_scene, seg_len))
            seg_task, seg_scene = now
            seg_len = 0
    segments.append((seg_task, seg_scene, seg_len))
    return segments


def task_stream_benchmark_generator(
    tasks: Sequence[Task],
    durations: Sequence[MaxSteps | MaxEpisodes],
    scenes: Sequence[GridScene],
    swap_policy: OnTaskChange | EveryNEpisodes | EveryNSteps = OnTaskChange(),
    n_experiences: Optional[int] = None,
    n_envs: int = 1,
) -> RLScenario:
    """One experience per contiguous (task, scene) segment of the schedule.

    Every train experience's factory returns the SAME TaskStreamEnv object,
    with the segment's task/scene installed at build time; segment lengths
    describe the schedule the configs imply, while actual training time per
    experience is governed by the strategy's budget. The eval stream holds a
    fresh, independent env per distinct (task, scene) pair.
    """
    if n_envs != 1:
        raise TaskStreamConfigError(
            "the shared-instance task stream requires n_envs == 1"
        )
    if not tasks:
        raise TaskStreamConfigError("need at least one task")
    if len(tasks) != len(durations):
        raise TaskStreamConfigError(
            f"{len(tasks)} tasks but {len(durations)} durations"
        )
    segments = _enumerate_segments(durations, scenes, swap_policy)
    if n_experiences is not None:
        if n_experiences > len(segments):
            raise StreamExhausted(
                f"schedule implies {len(segments)} experiences, "
                f"{n_experiences} requested"
            )
        segments = segments[:n_experiences]

    first_task, first_scene, _ = segments[0]
    shared = TaskStreamEnv(scenes[first_scene], tasks[first_task])

    def make_factory(task: Task, scene: GridScene) -> Callable[[], Environment]:
        def factory() -> Environment:
            shared.set_active_task(task)
            shared.set_active_scene(scene)
            return shared

        return factory

    train = tuple(
        RLExperience(
            env_factory=make_factory(tasks[t], scenes[s]),
            task_label=t,
            n_envs=1,
            experience_index=i,
            name=f"{tasks[t].name}/scene{s}(len={length})",
        )
        for i, (t, s, length) in enumerate(segments)
    )

    seen: list[tuple[int, int]] = []
    for t, s, _ in segments:
        if (t, s) not in seen:
            seen.append((t, s))
    eval_exps = tuple(
        RLExperience(
            env_factory=(lambda t=t, s=s: TaskStreamEnv(scenes[s], tasks[t])),
            task_label=t,
            n_envs=1,
            experience_index=i,
            name=f"eval/{tasks[t].name}/scene{s}",
        )
        for i, (t, s) in enumerate(seen)
    )
    return RLScenario(train_stream=train, eval_stream=eval_exps)
