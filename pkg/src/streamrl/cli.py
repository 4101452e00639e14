"""Config-driven experiment runner.

    streamrl run <config.yaml>
    streamrl eval <config.yaml> <checkpoint.bin>
    streamrl plot-data <metrics.jsonl> <metric_name> [--phase P]

A run builds the scenario, strategy and plugins declared in the YAML config,
trains with all randomness pinned to the config's seeds, and leaves four
artifacts in output_dir: metrics.jsonl, forgetting.csv, checkpoint.bin, and
config_effective.yaml (the config with every default expanded, sufficient to
reproduce the run byte for byte). STREAMRL_OUTPUT_DIR overrides output_dir.

Exit codes: 0 success, 2 config/validation error (the message names the
offending key), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import yaml

from .benchmarks import (
    EnvSpec,
    Explicit,
    RandomSample,
    RLScenario,
    continual_control_generator,
    gym_benchmark_generator,
)
from .checkpoint import CheckpointError, restore_into, save_model
from .core_env import (
    ActionRemap,
    FrameStack,
    ObservationNormalize,
    ReducedActionSet,
    RewardClip,
    TimeLimit,
)
from .envs import Bandit, BanditParams, CartPole, CartPoleParams, GridWorld, parse_scene
from .evaluation import ForgettingMatrix, JsonlLogger, MetricsCollector, read_metrics_jsonl
from .nn import Adam, Mlp
from .plugins import EwcPlugin, NaivePlugin, ReplayPlugin
from .task_stream import (
    EveryNEpisodes,
    EveryNSteps,
    OnTaskChange,
    task_from_config,
    task_stream_benchmark_generator,
)
from .training import A2cStrategy, DqnStrategy, Episodes, Steps, TrainingBudget

EVAL_SEED_OFFSET = 100_000

STRATEGY_NAMES = ("dqn", "double_dqn", "a2c")
PLUGIN_NAMES = ("naive", "ewc", "replay")


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending key."""


def _check_keys(section: dict, path: str, required: tuple, optional: tuple) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(section).__name__}")
    unknown = sorted(set(section) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    for key in required:
        if key not in section:
            raise ConfigError(f"{path}.{key}: missing required key")


def _positive_int(value, path: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{path}: expected a positive integer, got {value!r}")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


# ---------------------------------------------------------------------------
# Section validators. Each returns the default-expanded ("effective") form.
# ---------------------------------------------------------------------------


def _effective_wrappers(entries, path: str) -> list[dict]:
    effective = []
    for i, entry in enumerate(entries):
        where = f"{path}[{i}]"
        if not isinstance(entry, dict) or len(entry) != 1:
            raise ConfigError(f"{where}: each wrapper is a one-key map")
        (kind, arg), = entry.items()
        if kind == "time_limit":
            effective.append({"time_limit": _positive_int(arg, where)})
        elif kind == "frame_stack":
            effective.append({"frame_stack": _positive_int(arg, where)})
        elif kind == "reward_clip":
            if not isinstance(arg, (list, tuple)) or len(arg) != 2:
                raise ConfigError(f"{where}.reward_clip: expected [lo, hi]")
            effective.append({"reward_clip": [_number(arg[0], where), _number(arg[1], where)]})
        elif kind == "obs_normalize":
            if arg is not True:
                raise ConfigError(f"{where}.obs_normalize: only 'true' is accepted")
            effective.append({"obs_normalize": True})
        elif kind == "action_remap":
            if not isinstance(arg, dict):
                raise ConfigError(f"{where}.action_remap: expected a {{new: inner}} map")
            effective.append({"action_remap": {int(k): int(v) for k, v in arg.items()}})
        elif kind == "reduced_actions":
            if not isinstance(arg, list) or not arg:
                raise ConfigError(f"{where}.reduced_actions: expected a non-empty list")
            effective.append({"reduced_actions": [int(a) for a in arg]})
        else:
            raise ConfigError(f"{where}: unknown wrapper {kind!r}")
    return effective


def _wrapper_specs(effective: list[dict]) -> tuple:
    specs = []
    for entry in effective:
        (kind, arg), = entry.items()
        if kind == "time_limit":
            specs.append(TimeLimit(arg))
        elif kind == "frame_stack":
            specs.append(FrameStack(arg))
        elif kind == "reward_clip":
            specs.append(RewardClip(arg[0], arg[1]))
        elif kind == "obs_normalize":
            specs.append(ObservationNormalize())
        elif kind == "action_remap":
            specs.append(ActionRemap.from_dict(arg))
        else:
            specs.append(ReducedActionSet(tuple(arg)))
    return tuple(specs)


def _env_spec_from_config(entry: dict, path: str) -> tuple[dict, EnvSpec]:
    _check_keys(entry, path, required=("name", "env"), optional=("map", "params", "wrappers"))
    name = entry["name"]
    kind = entry["env"]
    params = entry.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{path}.params: expected a mapping")
    wrappers_eff = _effective_wrappers(entry.get("wrappers", []), f"{path}.wrappers")
    effective = {"name": name, "env": kind, "params": dict(params), "wrappers": wrappers_eff}
    specs = _wrapper_specs(wrappers_eff)
    if kind == "gridworld":
        if "map" not in entry:
            raise ConfigError(f"{path}.map: gridworld env needs a text map")
        effective["map"] = entry["map"]
        try:
            scene = parse_scene(entry["map"], **params)
        except TypeError:
            raise ConfigError(f"{path}.params: not valid gridworld scene fields")
        except ValueError as err:
            raise ConfigError(f"{path}.map: {err}")
        factory = lambda scene=scene: GridWorld(scene)  # noqa: E731
    elif kind == "cartpole":
        try:
            cp = CartPoleParams().override(**params)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"{path}.params: {err}")
        factory = lambda cp=cp: CartPole(cp)  # noqa: E731
    elif kind == "bandit":
        if "means" not in params:
            raise ConfigError(f"{path}.params.means: bandit env needs arm means")
        bp = BanditParams(
            means=tuple(float(m) for m in params["means"]),
            noise_std=float(params.get("noise_std", 0.0)),
        )
        effective["params"] = {"means": list(bp.means), "noise_std": bp.noise_std}
        factory = lambda bp=bp: Bandit(bp)  # noqa: E731
    else:
        raise ConfigError(
            f"{path}.env: unknown env {kind!r} (choose from gridworld, cartpole, bandit)"
        )
    return effective, EnvSpec(name=name, factory=factory, wrappers=specs)


def _effective_scenario(section: dict) -> dict:
    if not isinstance(section, dict):
        raise ConfigError("scenario: expected a mapping")
    generator = section.get("generator")
    if generator == "gym_benchmark":
        _check_keys(
            section,
            "scenario",
            required=("generator", "env_specs", "n_experiences", "order"),
            optional=("n_parallel_envs",),
        )
        order = section["order"]
        if not isinstance(order, dict) or len(order) != 1:
            raise ConfigError("scenario.order: one-key map {explicit: [...]} or {random_seed: s}")
        (order_kind, order_arg), = order.items()
        if order_kind == "explicit":
            if not isinstance(order_arg, list):
                raise ConfigError("scenario.order.explicit: expected a list of spec indices")
            order_eff = {"explicit": [int(i) for i in order_arg]}
        elif order_kind == "random_seed":
            order_eff = {"random_seed": int(order_arg)}
        else:
            raise ConfigError(f"scenario.order: unknown order kind {order_kind!r}")
        if not isinstance(section["env_specs"], list) or not section["env_specs"]:
            raise ConfigError("scenario.env_specs: expected a non-empty list")
        specs_eff = [
            _env_spec_from_config(entry, f"scenario.env_specs[{i}]")[0]
            for i, entry in enumerate(section["env_specs"])
        ]
        return {
            "generator": "gym_benchmark",
            "env_specs": specs_eff,
            "n_experiences": _positive_int(section["n_experiences"], "scenario.n_experiences"),
            "order": order_eff,
            "n_parallel_envs": _positive_int(
                section.get("n_parallel_envs", 1), "scenario.n_parallel_envs"
            ),
        }
    if generator == "continual_control":
        _check_keys(
            section,
            "scenario",
            required=("generator", "schedule"),
            optional=("base_params", "n_parallel_envs"),
        )
        if not isinstance(section["schedule"], list) or not section["schedule"]:
            raise ConfigError("scenario.schedule: expected a non-empty list of override maps")
        base = section.get("base_params", {})
        if not isinstance(base, dict):
            raise ConfigError("scenario.base_params: expected a mapping")
        try:
            base_params = CartPoleParams().override(**base)
            for i, overrides in enumerate(section["schedule"]):
                if not isinstance(overrides, dict):
                    raise ConfigError(f"scenario.schedule[{i}]: expected a mapping")
                base_params.override(**overrides)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"scenario: bad cart-pole parameters: {err}")
        return {
            "generator": "continual_control",
            "base_params": dict(base),
            "schedule": [dict(s) for s in section["schedule"]],
            "n_parallel_envs": _positive_int(
                section.get("n_parallel_envs", 1), "scenario.n_parallel_envs"
            ),
        }
    if generator == "task_stream":
        _check_keys(
            section,
            "scenario",
            required=("generator", "tasks", "scenes"),
            optional=("swap", "scene_params", "n_experiences"),
        )
        if not isinstance(section["tasks"], list) or not section["tasks"]:
            raise ConfigError("scenario.tasks: expected a non-empty list")
        if not isinstance(section["scenes"], list) or not section["scenes"]:
            raise ConfigError("scenario.scenes: expected a non-empty list of text maps")
        swap = section.get("swap", {"on_task_change": True})
        if not isinstance(swap, dict) or len(swap) != 1:
            raise ConfigError(
                "scenario.swap: one-key map among on_task_change/every_n_episodes/every_n_steps"
            )
        (swap_kind, swap_arg), = swap.items()
        if swap_kind == "on_task_change":
            if swap_arg is not True:
                raise ConfigError("scenario.swap.on_task_change: only 'true' is accepted")
            swap_eff = {"on_task_change": True}
        elif swap_kind == "every_n_episodes":
            swap_eff = {"every_n_episodes": _positive_int(swap_arg, "scenario.swap")}
        elif swap_kind == "every_n_steps":
            swap_eff = {"every_n_steps": _positive_int(swap_arg, "scenario.swap")}
        else:
            raise ConfigError(f"scenario.swap: unknown swap policy {swap_kind!r}")
        scene_params = section.get("scene_params", {})
        if not isinstance(scene_params, dict):
            raise ConfigError("scenario.scene_params: expected a mapping")
        effective = {
            "generator": "task_stream",
            "tasks": [dict(t) for t in section["tasks"]],
            "scenes": list(section["scenes"]),
            "scene_params": dict(scene_params),
            "swap": swap_eff,
        }
        if "n_experiences" in section:
            effective["n_experiences"] = _positive_int(
                section["n_experiences"], "scenario.n_experiences"
            )
        return effective
    raise ConfigError(
        f"scenario.generator: unknown generator {generator!r} "
        "(choose from gym_benchmark, continual_control, task_stream)"
    )


def _build_scenario(effective: dict) -> RLScenario:
    generator = effective["generator"]
    if generator == "gym_benchmark":
        specs = [
            _env_spec_from_config(entry, f"scenario.env_specs[{i}]")[1]
            for i, entry in enumerate(effective["env_specs"])
        ]
        order_eff = effective["order"]
        if "explicit" in order_eff:
            order = Explicit(tuple(order_eff["explicit"]))
        else:
            order = RandomSample(order_eff["random_seed"])
        try:
            return gym_benchmark_generator(
                specs,
                n_experiences=effective["n_experiences"],
                order=order,
                n_parallel_envs=effective["n_parallel_envs"],
            )
        except ValueError as err:
            raise ConfigError(f"scenario: {err}")
    if generator == "continual_control":
        base = CartPoleParams().override(**effective["base_params"])
        return continual_control_generator(
            base, effective["schedule"], n_parallel_envs=effective["n_parallel_envs"]
        )
    tasks, durations = [], []
    for i, entry in enumerate(effective["tasks"]):
        try:
            task, duration = task_from_config(entry)
        except ValueError as err:
            raise ConfigError(f"scenario.tasks[{i}]: {err}")
        tasks.append(task)
        durations.append(duration)
    try:
        scenes = [
            parse_scene(text, **effective["scene_params"]) for text in effective["scenes"]
        ]
    except (TypeError, ValueError) as err:
        raise ConfigError(f"scenario.scenes: {err}")
    swap_eff = effective["swap"]
    if "on_task_change" in swap_eff:
        policy = OnTaskChange()
    elif "every_n_episodes" in swap_eff:
        policy = EveryNEpisodes(swap_eff["every_n_episodes"])
    else:
        policy = EveryNSteps(swap_eff["every_n_steps"])
    try:
        return task_stream_benchmark_generator(
            tasks,
            durations,
            scenes,
            swap_policy=policy,
            n_experiences=effective.get("n_experiences"),
        )
    except ValueError as err:
        raise ConfigError(f"scenario: {err}")


_STRATEGY_DEFAULTS_COMMON = {"gamma": 0.99, "lr": 0.001, "hidden": [64, 64]}
_STRATEGY_DEFAULTS_DQN = {
    "batch_size": 32,
    "replay_capacity": 10_000,
    "target_sync_period": 100,
    "eps_start": 1.0,
    "eps_end": 0.05,
    "eps_decay_fraction": 0.1,
}
_STRATEGY_DEFAULTS_A2C = {"value_coef": 0.5, "entropy_coef": 0.01}


def _effective_strategy(section: dict) -> dict:
    if not isinstance(section, dict):
        raise ConfigError("strategy: expected a mapping")
    name = section.get("name")
    if name not in STRATEGY_NAMES:
        raise ConfigError(
            f"strategy.name: unknown strategy {name!r} (choose from {', '.join(STRATEGY_NAMES)})"
        )
    extra = _STRATEGY_DEFAULTS_A2C if name == "a2c" else _STRATEGY_DEFAULTS_DQN
    allowed = {**_STRATEGY_DEFAULTS_COMMON, **extra}
    _check_keys(section, "strategy", required=("name",), optional=tuple(allowed))
    effective = {"name": name}
    for key, default in allowed.items():
        value = section.get(key, default)
        if key == "hidden":
            if not isinstance(value, list) or not all(
                isinstance(v, int) and v > 0 for v in value
            ):
                raise ConfigError("strategy.hidden: expected a list of positive layer widths")
            effective[key] = list(value)
        elif key in ("batch_size", "replay_capacity", "target_sync_period"):
            effective[key] = _positive_int(value, f"strategy.{key}")
        else:
            effective[key] = _number(value, f"strategy.{key}")
    return effective


def _effective_plugins(entries) -> list[dict]:
    if entries is None:
        entries = []
    if not isinstance(entries, list):
        raise ConfigError("plugins: expected a list")
    effective = []
    for i, entry in enumerate(entries):
        path = f"plugins[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{path}: expected a mapping")
        name = entry.get("name")
        if name == "naive":
            _check_keys(entry, path, required=("name",), optional=())
            effective.append({"name": "naive"})
        elif name == "ewc":
            _check_keys(entry, path, required=("name",), optional=("lam", "fisher_sample_count"))
            effective.append(
                {
                    "name": "ewc",
                    "lam": _number(entry.get("lam", 100.0), f"{path}.lam"),
                    "fisher_sample_count": _positive_int(
                        entry.get("fisher_sample_count", 512), f"{path}.fisher_sample_count"
                    ),
                }
            )
        elif name == "replay":
            _check_keys(entry, path, required=("name",), optional=("capacity", "mix_ratio"))
            mix = _number(entry.get("mix_ratio", 0.5), f"{path}.mix_ratio")
            if not 0.0 <= mix <= 1.0:
                raise ConfigError(f"{path}.mix_ratio: must lie in [0, 1]")
            effective.append(
                {
                    "name": "replay",
                    "capacity": _positive_int(entry.get("capacity", 10_000), f"{path}.capacity"),
                    "mix_ratio": mix,
                }
            )
        else:
            raise ConfigError(
                f"{path}.name: unknown plugin {name!r} (choose from {', '.join(PLUGIN_NAMES)})"
            )
    return effective


def _effective_budget(section: dict) -> dict:
    _check_keys(section, "budget", required=("updates_per_experience",), optional=("rollout",))
    rollout = section.get("rollout", {"steps": 5})
    if not isinstance(rollout, dict) or len(rollout) != 1:
        raise ConfigError("budget.rollout: one-key map {steps: n} or {episodes: n}")
    (kind, n), = rollout.items()
    if kind not in ("steps", "episodes"):
        raise ConfigError(f"budget.rollout: unknown rollout condition {kind!r}")
    return {
        "updates_per_experience": _positive_int(
            section["updates_per_experience"], "budget.updates_per_experience"
        ),
        "rollout": {kind: _positive_int(n, "budget.rollout")},
    }


def validate_config(raw: dict) -> dict:
    """Validates the parsed YAML and returns the default-expanded config."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a top-level mapping")
    _check_keys(
        raw,
        "config",
        required=("scenario", "strategy", "budget", "seeds", "output_dir"),
        optional=("plugins", "eval"),
    )
    seeds = raw["seeds"]
    _check_keys(seeds, "seeds", required=("env", "net", "sampling"), optional=())
    seeds_eff = {}
    for key in ("env", "net", "sampling"):
        value = seeds[key]
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ConfigError(f"seeds.{key}: expected a non-negative integer, got {value!r}")
        seeds_eff[key] = value
    eval_section = raw.get("eval", {})
    _check_keys(eval_section, "eval", required=(), optional=("episodes", "after_each_experience"))
    eval_eff = {
        "episodes": _positive_int(eval_section.get("episodes", 10), "eval.episodes"),
        "after_each_experience": bool(eval_section.get("after_each_experience", True)),
    }
    if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
        raise ConfigError("output_dir: expected a non-empty string")
    return {
        "scenario": _effective_scenario(raw["scenario"]),
        "strategy": _effective_strategy(raw["strategy"]),
        "plugins": _effective_plugins(raw.get("plugins")),
        "budget": _effective_budget(raw["budget"]),
        "seeds": seeds_eff,
        "eval": eval_eff,
        "output_dir": raw["output_dir"],
    }


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"config: cannot read {path}: {err}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"config: YAML parse error: {err}")
    return validate_config(raw)


# ---------------------------------------------------------------------------
# Wiring: effective config -> live objects.
# ---------------------------------------------------------------------------


def _build_model(strategy_eff: dict, obs_dim: int, n_actions: int, net_seed: int) -> Mlp:
    if strategy_eff["name"] == "a2c":
        heads = {"policy_logits": n_actions, "value": 1}
    else:
        heads = {"q_values": n_actions}
    sizes = [obs_dim] + list(strategy_eff["hidden"]) + [sum(heads.values())]
    return Mlp(sizes, heads=heads, seed=net_seed)


def _build_strategy(config: dict, scenario: RLScenario, metrics: MetricsCollector | None):
    strategy_eff = config["strategy"]
    seeds = config["seeds"]
    budget_eff = config["budget"]
    (kind, n), = budget_eff["rollout"].items()
    condition = Steps(n) if kind == "steps" else Episodes(n)
    budget = TrainingBudget(budget_eff["updates_per_experience"], condition)

    probe = scenario.train_stream[0].env_factory()
    obs_dim = probe.observation_space.shape[0]
    n_actions = probe.action_space.n
    model = _build_model(strategy_eff, obs_dim, n_actions, seeds["net"])
    optimizer = Adam(strategy_eff["lr"])
    common = dict(
        gamma=strategy_eff["gamma"],
        env_seed=seeds["env"],
        eval_env_seed=seeds["env"] + EVAL_SEED_OFFSET,
        metrics=metrics,
    )
    if strategy_eff["name"] == "a2c":
        return A2cStrategy(
            model,
            optimizer,
            budget,
            value_coef=strategy_eff["value_coef"],
            entropy_coef=strategy_eff["entropy_coef"],
            action_seed=seeds["sampling"],
            **common,
        )
    return DqnStrategy(
        model,
        optimizer,
        budget,
        batch_size=strategy_eff["batch_size"],
        replay_capacity=strategy_eff["replay_capacity"],
        target_sync_period=strategy_eff["target_sync_period"],
        double=strategy_eff["name"] == "double_dqn",
        eps_start=strategy_eff["eps_start"],
        eps_end=strategy_eff["eps_end"],
        eps_decay_fraction=strategy_eff["eps_decay_fraction"],
        action_seed=seeds["sampling"],
        replay_seed=seeds["sampling"] + 1,
        **common,
    )


def _build_plugins(config: dict) -> list:
    plugins = []
    for entry in config["plugins"]:
        if entry["name"] == "naive":
            plugins.append(NaivePlugin())
        elif entry["name"] == "ewc":
            plugins.append(EwcPlugin(entry["lam"], entry["fisher_sample_count"]))
        else:
            plugins.append(
                ReplayPlugin(
                    entry["capacity"],
                    entry["mix_ratio"],
                    seed=config["seeds"]["sampling"] + 2,
                )
            )
    return plugins


def _resolve_output_dir(config: dict) -> Path:
    out = os.environ.get("STREAMRL_OUTPUT_DIR") or config["output_dir"]
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_run(config_path: str) -> int:
    config = load_config(config_path)
    out_dir = _resolve_output_dir(config)
    effective = dict(config)
    effective["output_dir"] = str(out_dir)
    (out_dir / "config_effective.yaml").write_text(
        yaml.safe_dump(effective, sort_keys=True)
    )

    collector = MetricsCollector(window=10, loggers=[JsonlLogger(out_dir / "metrics.jsonl")])
    try:
        scenario = _build_scenario(config["scenario"])
        strategy = _build_strategy(config, scenario, collector)
        plugins = _build_plugins(config)
        peval = config["eval"]["after_each_experience"]
        episodes = config["eval"]["episodes"]
        report = strategy.train(
            scenario,
            plugins,
            eval_stream=scenario.eval_stream if peval else None,
            eval_episodes=episodes,
        )
        if peval:
            eval_rows = report.evals
        else:
            eval_rows = (tuple(strategy.evaluate(scenario.eval_stream, episodes)),)
        matrix = ForgettingMatrix(len(scenario.eval_stream))
        for row in eval_rows:
            matrix.add_row([result.mean_return for result in row])
        matrix.write_csv(out_dir / "forgetting.csv")

        sections = {}
        for plugin in plugins:
            if hasattr(plugin, "state_sections"):
                sections.update(plugin.state_sections())
        save_model(out_dir / "checkpoint.bin", strategy.model, sections)
    finally:
        collector.close()

    for exp_report in report.experiences:
        print(
            f"experience {exp_report.experience_index} (task {exp_report.task_label}): "
            f"{exp_report.env_steps} env steps, {exp_report.updates_applied} updates, "
            f"{exp_report.episodes_completed} episodes"
        )
    final = eval_rows[-1]
    for result in final:
        print(
            f"eval task {result.task_label}: return {result.mean_return:.4f} "
            f"± {result.std_return:.4f}"
        )
    print(f"artifacts written to {out_dir}")
    return 0


def cmd_eval(config_path: str, checkpoint_path: str) -> int:
    config = load_config(config_path)
    out_dir = _resolve_output_dir(config)
    scenario = _build_scenario(config["scenario"])
    collector = MetricsCollector(
        window=10, loggers=[JsonlLogger(out_dir / "eval_metrics.jsonl")]
    )
    try:
        strategy = _build_strategy(config, scenario, collector)
        restore_into(strategy.model, checkpoint_path)
        results = strategy.evaluate(scenario.eval_stream, config["eval"]["episodes"])
    finally:
        collector.close()
    for result in results:
        print(
            f"task {result.task_label}: return {result.mean_return:.4f} "
            f"± {result.std_return:.4f} (mean length {result.mean_length:.1f})"
        )
    return 0


def cmd_plot_data(metrics_path: str, metric_name: str, phase: str | None) -> int:
    records = read_metrics_jsonl(metrics_path)
    names = sorted({record.metric_name for record in records})
    if metric_name not in names:
        print(
            f"unknown metric {metric_name!r}; available: {', '.join(names)}",
            file=sys.stderr,
        )
        return 2
    rows = [
        (record.global_step, record.value)
        for record in records
        if record.metric_name == metric_name and (phase is None or record.phase == phase)
    ]
    rows.sort(key=lambda pair: pair[0])
    print("step,value")
    for step, value in rows:
        print(f"{step},{value!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamrl", description="Config-driven continual RL experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="train from a config file")
    run_p.add_argument("config")
    eval_p = sub.add_parser("eval", help="evaluate a checkpoint")
    eval_p.add_argument("config")
    eval_p.add_argument("checkpoint")
    plot_p = sub.add_parser("plot-data", help="metric time series as CSV on stdout")
    plot_p.add_argument("metrics")
    plot_p.add_argument("metric_name")
    plot_p.add_argument("--phase", default=None, help="keep only records from this phase")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config)
        if args.command == "eval":
            return cmd_eval(args.config, args.checkpoint)
        return cmd_plot_data(args.metrics, args.metric_name, args.phase)
    except (ConfigError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failure
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
