"""
Environment contract, state/action/transition value types, the conjugate involution and
seeded random streams
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, NamedTuple, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .workbench_models import ConfigParseError, ContractViolationError, SimulationDivergedError

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


def _frozen_array(values: ArrayLike) -> np.ndarray:
    array = np.array(values, dtype=np.float64).reshape(-1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class StateVector:
    """Environment state split into configuration (q) and velocity (p) blocks"""
    config: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'config', _frozen_array(self.config))
        object.__setattr__(self, 'velocity', _frozen_array(self.velocity))
        if self.config.shape != self.velocity.shape:
            raise ContractViolationError(
                f"config and velocity blocks differ in length: "
                f"{self.config.size} vs {self.velocity.size}"
            )

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateVector):
            return NotImplemented
        return (np.array_equal(self.config, other.config)
                and np.array_equal(self.velocity, other.velocity))

    __hash__ = None

    @property
    def dim(self) -> int:
        """Number of generalized coordinates"""
        return self.config.size

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.config)) and np.all(np.isfinite(self.velocity)))

    def as_array(self) -> np.ndarray:
        """Concatenate as [config, velocity]"""
        return np.concatenate([self.config, self.velocity])

    @classmethod
    def from_array(cls, values: ArrayLike, dim: Optional[int] = None) -> 'StateVector':
        """Split a flat [config, velocity] vector"""
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        dim = values.size // 2 if dim is None else dim
        if values.size != 2 * dim:
            raise ContractViolationError(f"Cannot split {values.size} values into two blocks of {dim}")
        return cls(values[:dim], values[dim:])

    def max_abs_difference(self, other: 'StateVector') -> float:
        return float(np.max(np.abs(self.as_array() - other.as_array())))


@dataclass(frozen=True, eq=False)
class Action:
    """Normalized actuator command, each component in [-1, 1]"""
    torques: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'torques', _frozen_array(self.torques))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Action):
            return NotImplemented
        return np.array_equal(self.torques, other.torques)

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.torques.size

    @classmethod
    def clamped(cls, values: ArrayLike) -> 'Action':
        """Build an action with every component clamped into [-1, 1]"""
        return cls(np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0))

    def is_valid(self) -> bool:
        return bool(np.all(np.abs(self.torques) <= 1.0))


@dataclass(frozen=True)
class Transition:
    """One environment step"""
    state: StateVector
    action: Action
    reward: float
    next_state: StateVector
    terminal: bool = False


@dataclass(frozen=True)
class Involution:
    """Conjugate map f(q, p) = (q, mask * p); actions map to themselves"""
    velocity_sign_mask: Tuple[float, ...]

    def __post_init__(self):
        mask = tuple(float(v) for v in self.velocity_sign_mask)
        if any(v not in (1.0, -1.0) for v in mask):
            raise ContractViolationError(f"Involution mask entries must be +1 or -1, got {mask}")
        object.__setattr__(self, 'velocity_sign_mask', mask)

    @classmethod
    def negate_velocities(cls, dim: int) -> 'Involution':
        return cls(tuple([-1.0] * dim))

    def apply(self, state: StateVector) -> StateVector:
        return conjugate_state(state, self)


@dataclass(frozen=True)
class EnvDescriptor:
    """Static description of an environment"""
    name: str
    state_dim: int
    action_dim: int
    dt: float
    episode_length: int
    reward_fn: Callable[[StateVector], float]
    involution: Involution
    max_step_reward: float = 1.0

    @property
    def nominal_max_return(self) -> float:
        return self.episode_length * self.max_step_reward


class RngStream:
    """
    Deterministic random stream identified by (seed, stream_id)

    Draws come from a PCG64 generator seeded through a SeedSequence whose spawn key is the
    stream id, so sibling streams of one seed are independent and reproducible.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= int(seed) < 2 ** 64:
            raise ContractViolationError(f"Seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,)))
        )

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def derive(self, stream_id: int) -> 'RngStream':
        """Fresh stream of the same seed"""
        return RngStream(self.seed, stream_id)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size)


class StepResult(NamedTuple):
    next_state: StateVector
    reward: float
    terminal: bool


def conjugate_state(state: StateVector, involution: Involution) -> StateVector:
    """
    Apply f(q, p) = (q, mask * p)

    Raises:
        ContractViolationError: If the mask does not match the velocity block or the state is
            not finite
    """
    if len(involution.velocity_sign_mask) != state.velocity.size:
        raise ContractViolationError(
            f"Involution mask length {len(involution.velocity_sign_mask)} does not match "
            f"velocity length {state.velocity.size}"
        )
    if not state.is_finite():
        raise ContractViolationError("Cannot conjugate a non-finite state")
    return StateVector(state.config, state.velocity * np.asarray(involution.velocity_sign_mask))


def conjugate_action(action: Action) -> Action:
    """Actions are unchanged under time reversal"""
    return action


def conjugate_transition(transition: Transition, descriptor: EnvDescriptor) -> Transition:
    """
    Time-reversed counterpart of a transition

    The reversed transition departs from the conjugate of the arrival state and arrives at
    the conjugate of the departure state, with the reward re-evaluated at that arrival.
    """
    involution = descriptor.involution
    reversed_start = conjugate_state(transition.next_state, involution)
    reversed_end = conjugate_state(transition.state, involution)
    return Transition(
        state=reversed_start,
        action=conjugate_action(transition.action),
        reward=float(descriptor.reward_fn(reversed_end)),
        next_state=reversed_end,
        terminal=False,
    )


class Environment(ABC):
    """
    Base class for continuous environments

    Subclasses integrate their dynamics over one control interval in `_advance`. Handles are
    confined to a single thread; `steps_taken` is the only mutable step state.
    """

    def __init__(self, descriptor: EnvDescriptor):
        self.descriptor = descriptor
        self.steps_taken = 0

    @property
    def name(self) -> str:
        return self.descriptor.name

    @property
    def action_dim(self) -> int:
        return self.descriptor.action_dim

    @abstractmethod
    def reset(self, rng: RngStream) -> StateVector:
        """Sample from the initial-state distribution"""

    @abstractmethod
    def _advance(self, state: StateVector, action: Action) -> StateVector:
        """Integrate the dynamics over one control interval"""

    @abstractmethod
    def observe(self, state: StateVector) -> np.ndarray:
        """Policy input features for a state"""

    @property
    def observation_dim(self) -> int:
        probe = StateVector(np.zeros(self.descriptor.state_dim // 2),
                            np.zeros(self.descriptor.state_dim // 2))
        return self.observe(probe).size

    def observe_batch(self, states: np.ndarray) -> np.ndarray:
        """Features for a (batch, state_dim) array of flat states"""
        return np.stack([self.observe(StateVector.from_array(row)) for row in states])

    def clamp_action(self, action: Union[Action, ArrayLike]) -> Action:
        torques = action.torques if isinstance(action, Action) else action
        torques = np.asarray(torques, dtype=np.float64).reshape(-1)
        if torques.size != self.action_dim:
            raise ContractViolationError(
                f"{self.name} expects {self.action_dim} action components, got {torques.size}"
            )
        return Action.clamped(torques)

    def is_terminal(self, state: StateVector) -> bool:
        """Continuous tasks have no failure states; time limits belong to the harness"""
        return False

    def step(self, state: StateVector, action: Union[Action, ArrayLike],
             rng: Optional[RngStream] = None) -> StepResult:
        """
        Advance one control step

        Raises:
            SimulationDivergedError: If the integrated state is not finite
        """
        action = self.clamp_action(action)
        next_state = self._advance(state, action)
        if not next_state.is_finite():
            raise SimulationDivergedError(
                f"{self.name} diverged stepping from {state.as_array().tolist()}",
                state=next_state.as_array(),
            )
        self.steps_taken += 1
        reward = float(self.descriptor.reward_fn(next_state))
        return StepResult(next_state, reward, self.is_terminal(next_state))


def env_step(env: Environment, state: StateVector, action: Union[Action, ArrayLike],
             rng: Optional[RngStream] = None) -> StepResult:
    return env.step(state, action, rng)


def env_reset(env: Environment, rng: RngStream) -> StateVector:
    return env.reset(rng)


def replace_checked(record, updates: Dict[str, Any], section: str):
    """
    dataclasses.replace for validated parameter records, reporting a rejected value as a
    ConfigParseError keyed by its dotted name

    Updates are applied in order and the first one whose addition makes the record invalid
    is blamed.

    Args:
        record: Frozen dataclass whose __post_init__ raises ContractViolationError
        updates: Field overrides
        section: Config section the fields live under, e.g. "env" or "learner"
    """
    applied: Dict[str, Any] = {}
    for name, value in updates.items():
        applied[name] = value
        try:
            replace(record, **applied)
        except ContractViolationError as e:
            raise ConfigParseError(f"Invalid value for {section}.{name}: {e}", key=f"{section}.{name}",
                                   original_error=e)
    return replace(record, **updates)
