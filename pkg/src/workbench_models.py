"""
Shared enums, result records, exceptions and constants for the time-reversal workbench
"""

from dataclasses import dataclass, asdict, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Optional, Dict, Any, List, Tuple
import json
import math


class IntegratorMethod(Enum):
    """Enumeration of numerical integration schemes"""
    LEAPFROG = "leapfrog"
    RK4 = "rk4"
    SEMI_IMPLICIT_EULER = "semi_implicit_euler"
    EULER = "euler"


class TorqueTier(Enum):
    """Actuator authority tiers for the manipulator"""
    UNDERPOWERED = "um"
    INTERMEDIATE = "im"
    OVERPOWERED = "om"

    @property
    def holding_multiple(self) -> float:
        """Torque limit as a multiple of the static holding torque"""
        return {"um": 0.4, "im": 1.0, "om": 2.0}[self.value]


class RunStatus(Enum):
    """Enumeration of training run outcomes"""
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass(frozen=True)
class ViolationReport:
    """Residual of a reversibility check"""
    max_violation: float
    witness: Tuple[int, ...]  # (state, action, next_state) indices, action -1 for chains
    passed: bool
    tolerance: float

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return asdict(self)


@dataclass(frozen=True)
class MetricsRow:
    """One evaluation checkpoint of a training run, or the terminal row of an aborted run"""
    run_id: str
    seed: int
    env_step: int
    mean_return: float
    std_return: float
    wall_seconds: float

    @classmethod
    def failure(cls, run_id: str, seed: int, env_step: int, wall_seconds: float = 0.0) -> 'MetricsRow':
        """Terminal row of an aborted run; NaN returns mark it"""
        return cls(run_id, seed, env_step, float('nan'), float('nan'), wall_seconds)

    @property
    def status(self) -> RunStatus:
        return RunStatus.FAILED if math.isnan(self.mean_return) else RunStatus.COMPLETED

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return asdict(self)


@dataclass(frozen=True)
class EvaluationResult:
    """Outcome of evaluating a policy over full episodes"""
    mean_return: float
    std_return: float
    returns: Tuple[float, ...]
    diverged_episodes: int = 0


@dataclass
class TrainResult:
    """Result of one training run"""
    status: RunStatus
    run_id: str
    seed: int
    rows: List[MetricsRow] = field(default_factory=list)
    checkpoint_path: Optional[str] = None
    metrics_path: Optional[str] = None
    buffer_size: int = 0
    error: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        result = asdict(self)
        result['status'] = self.status.value
        return result

    def to_json(self) -> str:
        """Convert to JSON string"""
        return json.dumps(self.to_dict(), indent=2)


# Custom Exceptions
class WorkbenchError(Exception):
    """Base exception for workbench errors"""
    default_code = "WORKBENCH_ERROR"

    def __init__(self, message: str, error_code: str = None, original_error: Exception = None):
        super().__init__(message)
        self.error_code = error_code or self.default_code
        self.original_error = original_error
        self.timestamp = datetime.now(timezone.utc)

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for logging"""
        return {
            "error_type": self.__class__.__name__,
            "message": str(self),
            "error_code": self.error_code,
            "timestamp": self.timestamp.isoformat(),
            "original_error": str(self.original_error) if self.original_error else None
        }


class ContractViolationError(WorkbenchError):
    """Raised when an operation's preconditions do not hold"""
    default_code = "CONTRACT_VIOLATION"


class SimulationDivergedError(WorkbenchError):
    """Raised when integration produces non-finite values"""
    default_code = "SIMULATION_DIVERGED"

    def __init__(self, message: str, state=None, **kwargs):
        super().__init__(message, **kwargs)
        self.state = state

    def to_dict(self) -> Dict[str, Any]:
        result = super().to_dict()
        result["state"] = None if self.state is None else [float(v) for v in self.state]
        return result


class TrainingDivergedError(WorkbenchError):
    """Raised when a learner loss becomes non-finite"""
    default_code = "TRAINING_DIVERGED"

    def __init__(self, message: str, diagnostics: Optional[Dict[str, float]] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.diagnostics = diagnostics or {}

    def to_dict(self) -> Dict[str, Any]:
        result = super().to_dict()
        result["diagnostics"] = {k: float(v) for k, v in self.diagnostics.items()}
        return result


class BufferNotReadyError(WorkbenchError):
    """Raised when sampling a replay buffer that holds too few transitions"""
    default_code = "BUFFER_NOT_READY"


class NoUniqueStationaryError(WorkbenchError):
    """Raised when a chain has more than one recurrent class"""
    default_code = "NO_UNIQUE_STATIONARY"


class ConfigParseError(WorkbenchError):
    """Raised when a run configuration is malformed"""
    default_code = "CONFIG_PARSE"

    def __init__(self, message: str, key: Optional[str] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.key = key


class CheckpointFormatError(WorkbenchError):
    """Raised when a policy checkpoint cannot be decoded"""
    default_code = "CHECKPOINT_FORMAT"


VALIDATION_ERRORS = (ConfigParseError, ContractViolationError, CheckpointFormatError)
DIVERGENCE_ERRORS = (SimulationDivergedError, TrainingDivergedError)


# Configuration class
class WorkbenchConfig:
    """Configuration constants for experiments"""

    # Evaluation protocol
    EVAL_INTERVAL = 4000
    EVAL_EPISODES = 10
    WARMUP_STEPS = 1000

    # Episodes
    EPISODE_LENGTH = 1000
    CONTROL_DT = 0.02
    SUBSTEPS = 10

    # Return needed to count a task as solved
    SOLVED_THRESHOLDS = {
        "pendulum": 600.0,
        "cartpole": 750.0,
        "manipulator": 800.0,
    }

    # Per-component random streams derived from the run seed
    ENV_STREAM = 0
    ACTOR_STREAM = 1
    BUFFER_STREAM = 2
    EVAL_STREAM = 3

    # Reversibility checks
    DEFAULT_TOLERANCE = 1e-9
    POWER_ITERATION_CAP = 1_000_000
    POWER_ITERATION_RESIDUAL = 1e-12

    # Output files
    METRICS_FILENAME = "metrics.csv"
    CHECKPOINT_FILENAME = "actor.bin"
    ERROR_FILENAME = "error.json"
    SWEEP_SUMMARY_FILENAME = "sweep_summary.csv"
    COMPARISON_FILENAME = "comparison.txt"
    METRICS_HEADER = ["run_id", "seed", "env_step", "mean_return", "std_return", "wall_seconds"]

    @classmethod
    def solved_threshold(cls, env_name: str) -> float:
        """Look up the solution threshold for an environment name"""
        family = env_name.split("-")[0]
        if family not in cls.SOLVED_THRESHOLDS:
            raise ContractViolationError(f"No solution threshold for environment {env_name}")
        return cls.SOLVED_THRESHOLDS[family]

    @classmethod
    def run_id(cls, env_name: str, tsda_enabled: bool, seed: int) -> str:
        """Generate the run identifier for one seed of one arm"""
        return f"{env_name}-tsda-{'on' if tsda_enabled else 'off'}-seed{seed}"

    @classmethod
    def get_run_dir(cls, output_dir: str, run_id: str) -> Path:
        return Path(output_dir) / run_id

    @classmethod
    def get_metrics_path(cls, output_dir: str, run_id: str) -> Path:
        return cls.get_run_dir(output_dir, run_id) / cls.METRICS_FILENAME

    @classmethod
    def get_checkpoint_path(cls, output_dir: str, run_id: str) -> Path:
        return cls.get_run_dir(output_dir, run_id) / cls.CHECKPOINT_FILENAME

    @classmethod
    def get_error_path(cls, output_dir: str, run_id: str) -> Path:
        return cls.get_run_dir(output_dir, run_id) / cls.ERROR_FILENAME
