"""
Replay buffer with time-symmetric data augmentation

Every observed transition can be stored together with its conjugate (time-reversed)
counterpart, doubling the number of transitions collected per environment step.
"""

from dataclasses import dataclass
from typing import Iterator, List
import logging

import numpy as np

from .core import Action, EnvDescriptor, RngStream, StateVector, Transition, conjugate_transition
from .workbench_models import BufferNotReadyError, ContractViolationError

logger = logging.getLogger(__name__)


def capacity_for(total_env_steps: int, tsda_enabled: bool) -> int:
    """Replay capacity holding every transition of a run; doubled with augmentation"""
    if total_env_steps <= 0:
        raise ContractViolationError(f"total_env_steps must be positive, got {total_env_steps}")
    return 2 * total_env_steps if tsda_enabled else total_env_steps


@dataclass(frozen=True)
class TransitionBatch:
    """Minibatch as stacked arrays; indexing yields Transition records"""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def __getitem__(self, index: int) -> Transition:
        return Transition(
            state=StateVector.from_array(self.states[index]),
            action=Action(self.actions[index]),
            reward=float(self.rewards[index]),
            next_state=StateVector.from_array(self.next_states[index]),
            terminal=bool(self.terminals[index]),
        )

    def __iter__(self) -> Iterator[Transition]:
        return (self[i] for i in range(len(self)))


class ReplayBuffer:
    """
    FIFO ring of transitions backed by preallocated arrays

    With tsda_enabled, push stores the observed transition followed immediately by its
    conjugate, so the pair occupies adjacent slots and is evicted like any other data.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, tsda_enabled: bool = False):
        if capacity < 1:
            raise ContractViolationError(f"Replay capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.tsda_enabled = tsda_enabled

        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.ptr = 0
        self.size = 0

        logger.info(f"Replay buffer ready: capacity {capacity}, augmentation {'on' if tsda_enabled else 'off'}")

    def __len__(self) -> int:
        return self.size

    def _append(self, transition: Transition) -> None:
        state = transition.state.as_array()
        if state.size != self.state_dim or transition.action.dim != self.action_dim:
            raise ContractViolationError(
                f"Transition shapes ({state.size}, {transition.action.dim}) do not match "
                f"buffer ({self.state_dim}, {self.action_dim})"
            )
        self.states[self.ptr] = state
        self.actions[self.ptr] = transition.action.torques
        self.rewards[self.ptr] = transition.reward
        self.next_states[self.ptr] = transition.next_state.as_array()
        self.terminals[self.ptr] = transition.terminal
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push(self, transition: Transition, descriptor: EnvDescriptor) -> None:
        """Store a transition and, with augmentation on, its conjugate right after it"""
        self._append(transition)
        if self.tsda_enabled:
            self._append(conjugate_transition(transition, descriptor))

    def sample(self, batch_size: int, rng: RngStream) -> TransitionBatch:
        """
        Draw batch_size transitions uniformly with replacement

        Raises:
            BufferNotReadyError: If fewer than batch_size transitions are stored
        """
        if self.size < batch_size:
            raise BufferNotReadyError(f"Buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return TransitionBatch(
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_states=self.next_states[idx],
            terminals=self.terminals[idx],
        )

    def transitions(self) -> List[Transition]:
        """Snapshot of the stored transitions, oldest first"""
        start = self.ptr if self.size == self.capacity else 0
        order = (start + np.arange(self.size)) % self.capacity
        snapshot = TransitionBatch(self.states[order], self.actions[order], self.rewards[order],
                                   self.next_states[order], self.terminals[order])
        return list(snapshot)


def push(buffer: ReplayBuffer, transition: Transition, descriptor: EnvDescriptor) -> None:
    buffer.push(transition, descriptor)


def sample(buffer: ReplayBuffer, batch_size: int, rng: RngStream) -> TransitionBatch:
    return buffer.sample(batch_size, rng)
