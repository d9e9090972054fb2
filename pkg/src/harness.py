"""
Experiment orchestration: run configuration, the training loop, evaluation, seed sweeps and
metrics persistence
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import csv
import json
import logging
import os
import time

import numpy as np
from dotenv import load_dotenv

from .core import Environment, RngStream, Transition, replace_checked
from .envs import make_env
from .learner import LearnerConfig, SoftActorCritic, save_policy, update_step
from .tsda import ReplayBuffer, capacity_for
from .workbench_models import (
    ConfigParseError, ContractViolationError, DIVERGENCE_ERRORS, EvaluationResult, MetricsRow,
    RunStatus, SimulationDivergedError, TrainResult, WorkbenchConfig, WorkbenchError
)

load_dotenv()

logger = logging.getLogger(__name__)

ARMS = (("tsda=on", True), ("tsda=off", False))
SWEEP_HEADER = ["arm", "env_step", "mean_return", "std_return", "n_seeds"]


@dataclass(frozen=True)
class RunConfig:
    """Validated experiment configuration"""
    env_name: str
    env_overrides: Dict[str, Any] = field(default_factory=dict)
    tsda_enabled: bool = False
    total_env_steps: int = 100_000
    eval_interval: int = WorkbenchConfig.EVAL_INTERVAL
    eval_episodes: int = WorkbenchConfig.EVAL_EPISODES
    seeds: Tuple[int, ...] = (0,)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    output_dir: str = field(default_factory=lambda: os.getenv('TSDA_OUTPUT_DIR', 'runs'))
    eval_stochastic: bool = False
    warmup_steps: int = WorkbenchConfig.WARMUP_STEPS
    record_wall_clock: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))
        if self.total_env_steps <= 0:
            raise ConfigParseError("run.total_env_steps must be positive", key="run.total_env_steps")
        if self.eval_interval <= 0 or self.total_env_steps % self.eval_interval:
            raise ConfigParseError(
                f"run.eval_interval {self.eval_interval} must divide run.total_env_steps {self.total_env_steps}",
                key="run.eval_interval",
            )
        if self.eval_episodes < 1:
            raise ConfigParseError("run.eval_episodes must be at least 1", key="run.eval_episodes")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds) or min(self.seeds) < 0:
            raise ConfigParseError("run.seeds must be nonempty, distinct and non-negative", key="run.seeds")
        if self.warmup_steps < 0:
            raise ConfigParseError("run.warmup_steps must be non-negative", key="run.warmup_steps")

    @property
    def solved_threshold(self) -> float:
        return WorkbenchConfig.solved_threshold(self.env_name)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_RUN_KEYS = {
    "total_env_steps": int,
    "eval_interval": int,
    "eval_episodes": int,
    "seeds": tuple,
    "output_dir": str,
    "eval_stochastic": bool,
    "warmup_steps": int,
    "record_wall_clock": bool,
}
_LEARNER_FIELDS = {f.name: f for f in fields(LearnerConfig)}
_LEARNER_DEFAULTS = LearnerConfig()


def _parse_scalar(text: str) -> Any:
    lowered = text.lower()
    if lowered in ("true", "on"):
        return True
    if lowered in ("false", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str) -> Any:
    """Typed value of a config entry: bool, int, float, comma list or string"""
    text = text.strip()
    if "," in text:
        return [_parse_scalar(item.strip()) for item in text.split(",")]
    return _parse_scalar(text)


def _typed(value: Any, kind: type, key: str) -> Any:
    mismatch = ConfigParseError(f"Type mismatch for {key}: {value!r}", key=key)
    if kind is bool:
        if not isinstance(value, bool):
            raise mismatch
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise mismatch
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise mismatch
        return float(value)
    if kind is tuple:
        items = value if isinstance(value, list) else [value]
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in items):
            raise mismatch
        return tuple(items)
    if kind is str:
        return str(value)
    raise mismatch


def _learner_kind(name: str) -> type:
    default = getattr(_LEARNER_DEFAULTS, name)
    return tuple if isinstance(default, tuple) else type(default)


def parse_config(text: str) -> RunConfig:
    """
    Parse a flat dotted key=value run configuration

    Args:
        text: File contents; blank lines and lines starting with '#' are ignored

    Returns:
        Validated RunConfig with defaults for every unspecified key

    Raises:
        ConfigParseError: Naming the offending key on unknown keys, type mismatches or
            invalid values
    """
    entries: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigParseError(f"Line {lineno} is not a key=value entry: {line}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ConfigParseError(f"Duplicate key {key} on line {lineno}", key=key)
        entries[key] = parse_value(value)

    env_name = None
    env_overrides: Dict[str, Any] = {}
    kwargs: Dict[str, Any] = {}
    learner_kwargs: Dict[str, Any] = {}
    for key, value in entries.items():
        section, _, name = key.partition(".")
        if section == "env" and name == "name":
            env_name = str(value)
        elif section == "env" and name:
            env_overrides[name] = tuple(value) if isinstance(value, list) else value
        elif section == "tsda" and name == "enabled":
            kwargs["tsda_enabled"] = _typed(value, bool, key)
        elif section == "run" and name in _RUN_KEYS:
            kwargs[name] = _typed(value, _RUN_KEYS[name], key)
        elif section == "learner" and name in _LEARNER_FIELDS:
            learner_kwargs[name] = _typed(value, _learner_kind(name), key)
        else:
            raise ConfigParseError(f"Unknown config key {key}", key=key)

    if env_name is None:
        raise ConfigParseError("env.name is required", key="env.name")
    make_env(env_name, env_overrides)
    learner = replace_checked(_LEARNER_DEFAULTS, learner_kwargs, "learner")
    return RunConfig(env_name=env_name, env_overrides=env_overrides, learner=learner, **kwargs)


def load_config(path: Union[str, Path]) -> RunConfig:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigParseError(f"Cannot read config {path}", original_error=e)
    return parse_config(text)


# ---------------------------------------------------------------------------
# Metrics files
# ---------------------------------------------------------------------------

def write_metrics(path: Union[str, Path], rows: Sequence[MetricsRow]) -> Path:
    """Write rows as UTF-8 CSV with LF line endings"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(WorkbenchConfig.METRICS_HEADER)
        for row in rows:
            writer.writerow([row.run_id, row.seed, row.env_step, repr(row.mean_return),
                             repr(row.std_return), repr(row.wall_seconds)])
    return path


def read_metrics(path: Union[str, Path]) -> List[MetricsRow]:
    with open(path, encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != WorkbenchConfig.METRICS_HEADER:
            raise ContractViolationError(f"Unexpected metrics header in {path}: {reader.fieldnames}")
        return [
            MetricsRow(
                run_id=record["run_id"],
                seed=int(record["seed"]),
                env_step=int(record["env_step"]),
                mean_return=float(record["mean_return"]),
                std_return=float(record["std_return"]),
                wall_seconds=float(record["wall_seconds"]),
            )
            for record in reader
        ]


def write_error(path: Union[str, Path], error: WorkbenchError, context: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {**context, "error": error.to_dict()}
    path.write_text(json.dumps(payload, indent=2), encoding='utf-8')
    return path


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate_policy(policy, env: Environment, n_episodes: int, rng: RngStream,
                    deterministic: bool = True) -> EvaluationResult:
    """
    Run full episodes without learning and report mean and population std of the returns

    A diverged episode counts as return 0 and is logged as a warning.

    Args:
        policy: Anything with act(observation, rng, deterministic)
        env: Environment to roll out in
        n_episodes: Number of episodes, at least 1
        rng: Stream for initial states and any stochastic actions
        deterministic: Act with tanh of the policy mean
    """
    if n_episodes < 1:
        raise ContractViolationError(f"n_episodes must be at least 1, got {n_episodes}")
    returns = []
    diverged = 0
    for episode in range(n_episodes):
        state = env.reset(rng)
        episode_return = 0.0
        try:
            for _ in range(env.descriptor.episode_length):
                action = policy.act(env.observe(state), rng, deterministic)
                state, reward, terminal = env.step(state, action)
                episode_return += reward
                if terminal:
                    break
        except SimulationDivergedError as e:
            logger.warning(f"Evaluation episode {episode} on {env.name} diverged: {e}")
            episode_return = 0.0
            diverged += 1
        returns.append(episode_return)
    values = np.asarray(returns)
    return EvaluationResult(float(values.mean()), float(values.std()), tuple(returns), diverged)


def solved_at(rows: Sequence[MetricsRow], threshold: float) -> Optional[int]:
    """First env_step whose mean return reaches threshold, None if never"""
    if not threshold > 0:
        raise ContractViolationError(f"threshold must be positive, got {threshold}")
    for row in rows:
        if row.mean_return >= threshold:
            return row.env_step
    return None


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_run(config: RunConfig, seed: int) -> TrainResult:
    """
    Train one seed: interleave environment steps, replay pushes and learner updates, evaluate
    every eval_interval steps, then write metrics.csv and the actor checkpoint

    Divergence aborts the seed: the rows gathered so far plus a terminal failure row and
    error.json are still written, and a FAILED result is returned.
    """
    run_id = WorkbenchConfig.run_id(config.env_name, config.tsda_enabled, seed)
    metrics_path = WorkbenchConfig.get_metrics_path(config.output_dir, run_id)
    env = make_env(config.env_name, config.env_overrides)
    eval_env = make_env(config.env_name, config.env_overrides)
    descriptor = env.descriptor

    env_rng = RngStream(seed, WorkbenchConfig.ENV_STREAM)
    actor_rng = RngStream(seed, WorkbenchConfig.ACTOR_STREAM)
    buffer_rng = RngStream(seed, WorkbenchConfig.BUFFER_STREAM)
    eval_rng = RngStream(seed, WorkbenchConfig.EVAL_STREAM)

    learner = SoftActorCritic(env.observation_dim, env.action_dim, config.learner, rng=actor_rng,
                              featurize=env.observe_batch)
    buffer = ReplayBuffer(capacity_for(config.total_env_steps, config.tsda_enabled),
                          descriptor.state_dim, descriptor.action_dim, config.tsda_enabled)
    rows: List[MetricsRow] = []
    started = time.perf_counter()
    step = 0

    logger.info(f"Starting {run_id}: {config.total_env_steps} steps, evaluation every {config.eval_interval}")
    try:
        state = env.reset(env_rng)
        episode_step = 0
        for step in range(1, config.total_env_steps + 1):
            if step <= config.warmup_steps:
                action = actor_rng.uniform(-1.0, 1.0, size=env.action_dim)
            else:
                action = learner.policy.act(env.observe(state), actor_rng, deterministic=False)
            action = env.clamp_action(action)
            next_state, reward, terminal = env.step(state, action)
            buffer.push(Transition(state, action, reward, next_state, terminal), descriptor)

            episode_step += 1
            if terminal or episode_step >= descriptor.episode_length:
                state = env.reset(env_rng)
                episode_step = 0
            else:
                state = next_state

            if step >= config.warmup_steps and len(buffer) >= config.learner.batch_size:
                update_step(learner, buffer, buffer_rng)

            if step % config.eval_interval == 0:
                result = evaluate_policy(learner.policy, eval_env, config.eval_episodes, eval_rng,
                                         deterministic=not config.eval_stochastic)
                wall = time.perf_counter() - started if config.record_wall_clock else 0.0
                rows.append(MetricsRow(run_id, seed, step, result.mean_return, result.std_return, wall))
                logger.info(f"{run_id} step {step}: return {result.mean_return:.1f} +/- {result.std_return:.1f}")

    except DIVERGENCE_ERRORS as e:
        logger.error(f"{run_id} aborted: {e}", exc_info=True)
        wall = time.perf_counter() - started if config.record_wall_clock else 0.0
        rows.append(MetricsRow.failure(run_id, seed, step, wall))
        write_metrics(metrics_path, rows)
        write_error(WorkbenchConfig.get_error_path(config.output_dir, run_id), e,
                    {"run_id": run_id, "seed": seed, "env_step": step})
        return TrainResult(RunStatus.FAILED, run_id, seed, rows, metrics_path=str(metrics_path),
                           buffer_size=len(buffer), error=e.to_dict())

    write_metrics(metrics_path, rows)
    checkpoint = save_policy(WorkbenchConfig.get_checkpoint_path(config.output_dir, run_id), learner.policy)
    logger.info(f"Finished {run_id}: metrics at {metrics_path}")
    return TrainResult(RunStatus.COMPLETED, run_id, seed, rows, checkpoint_path=str(checkpoint),
                       metrics_path=str(metrics_path), buffer_size=len(buffer))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    """Across-seed aggregate of one evaluation checkpoint"""
    arm: str
    env_step: int
    mean_return: float
    std_return: float
    n_seeds: int


@dataclass
class SweepReport:
    """Paired sweep outcome; results and aggregates keyed by arm label"""
    results: Dict[str, List[TrainResult]]
    summary: List[SweepRow]
    median_solved_at: Dict[str, Optional[float]]
    threshold: float
    summary_path: Optional[str] = None
    comparison_path: Optional[str] = None

    @property
    def arms(self) -> List[str]:
        return list(self.results)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "arms": {arm: [r.to_dict() for r in runs] for arm, runs in self.results.items()},
            "summary": [asdict(row) for row in self.summary],
            "median_solved_at": self.median_solved_at,
            "threshold": self.threshold,
        }


def aggregate_rows(arm: str, results: Sequence[TrainResult]) -> List[SweepRow]:
    """Per-checkpoint mean and population std across completed seeds"""
    by_step: Dict[int, List[float]] = {}
    for result in results:
        if result.status != RunStatus.COMPLETED:
            continue
        for row in result.rows:
            by_step.setdefault(row.env_step, []).append(row.mean_return)
    return [
        SweepRow(arm, step, float(np.mean(values)), float(np.std(values)), len(values))
        for step, values in sorted(by_step.items())
    ]


def median_solved_at(results: Sequence[TrainResult], threshold: float) -> Optional[float]:
    """Median over completed seeds with unsolved seeds ranked last; None if that median is unsolved"""
    steps = [solved_at(r.rows, threshold) for r in results if r.status == RunStatus.COMPLETED]
    if not steps:
        return None
    median = float(np.median([np.inf if s is None else float(s) for s in steps]))
    return median if np.isfinite(median) else None


def final_return(results: Sequence[TrainResult]) -> Optional[float]:
    """Mean over completed seeds of the last evaluation's mean return; None without any"""
    finals = [r.rows[-1].mean_return for r in results if r.status == RunStatus.COMPLETED and r.rows]
    return float(np.mean(finals)) if finals else None


def format_comparison(report: SweepReport) -> str:
    lines = [f"{'arm':<10}{'completed':>10}{'solved':>8}{'median_solved_at':>18}{'final_return':>14}"]
    for arm, results in report.results.items():
        completed = [r for r in results if r.status == RunStatus.COMPLETED]
        solved = sum(1 for r in completed if solved_at(r.rows, report.threshold) is not None)
        median = report.median_solved_at[arm]
        shown = "not solved" if median is None else f"{median:.0f}"
        final = final_return(results)
        final_shown = "-" if final is None else f"{final:.1f}"
        lines.append(f"{arm:<10}{len(completed):>10}{solved:>8}{shown:>18}{final_shown:>14}")
    on, off = report.median_solved_at.get("tsda=on"), report.median_solved_at.get("tsda=off")
    if on is not None and off is not None:
        lines.append(f"ratio tsda=on / tsda=off: {on / off:.3f}")
    lines.append(f"threshold: {report.threshold:g}")
    return "\n".join(lines) + "\n"


def write_sweep_summary(path: Union[str, Path], rows: Sequence[SweepRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow([row.arm, row.env_step, repr(row.mean_return), repr(row.std_return), row.n_seeds])
    return path


def sweep_seeds(config: RunConfig, workers: Optional[int] = None) -> SweepReport:
    """
    Train every seed under both arms (augmentation on and off) and aggregate

    Seeds run in a process pool of TSDA_SWEEP_WORKERS workers (sequentially for 1). Failed
    seeds are kept in the results and excluded from the aggregates.
    """
    workers = workers if workers is not None else int(os.getenv('TSDA_SWEEP_WORKERS', '1'))
    jobs = [(arm, replace(config, tsda_enabled=enabled), seed) for arm, enabled in ARMS for seed in config.seeds]
    logger.info(f"Sweeping {config.env_name}: {len(config.seeds)} seeds x {len(ARMS)} arms on {workers} worker(s)")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(train_run, arm_config, seed) for _, arm_config, seed in jobs]
            outcomes = [future.result() for future in futures]
    else:
        outcomes = [train_run(arm_config, seed) for _, arm_config, seed in jobs]

    results: Dict[str, List[TrainResult]] = {arm: [] for arm, _ in ARMS}
    for (arm, _, _), outcome in zip(jobs, outcomes):
        results[arm].append(outcome)

    threshold = config.solved_threshold
    report = SweepReport(
        results=results,
        summary=[row for arm, runs in results.items() for row in aggregate_rows(arm, runs)],
        median_solved_at={arm: median_solved_at(runs, threshold) for arm, runs in results.items()},
        threshold=threshold,
    )
    out = Path(config.output_dir)
    report.summary_path = str(write_sweep_summary(out / WorkbenchConfig.SWEEP_SUMMARY_FILENAME, report.summary))
    comparison = out / WorkbenchConfig.COMPARISON_FILENAME
    comparison.write_text(format_comparison(report), encoding='utf-8')
    report.comparison_path = str(comparison)

    successful = sum(1 for r in outcomes if r.status == RunStatus.COMPLETED)
    logger.info(f"Sweep complete: {successful} successful, {len(outcomes) - successful} failed "
                f"out of {len(outcomes)}")
    return report
