"""
Numerical integration, energy accounting and the round-trip reversibility defect
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .core import Action, Environment, StateVector, conjugate_action, conjugate_state
from .workbench_models import ContractViolationError, IntegratorMethod, SimulationDivergedError

logger = logging.getLogger(__name__)

ForceFn = Callable[[np.ndarray], np.ndarray]
DerivFn = Callable[[np.ndarray], np.ndarray]
AccelFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

SYMPLECTIC_METHODS = (IntegratorMethod.LEAPFROG, IntegratorMethod.SEMI_IMPLICIT_EULER)


@dataclass(frozen=True)
class HamiltonianSystem:
    """Energy functions and generalized force of a mechanical system (unit-mass convention)"""
    kinetic_energy: Callable[[np.ndarray, np.ndarray], float]
    potential_energy: Callable[[np.ndarray], float]
    generalized_force: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration scheme for one control interval"""
    method: IntegratorMethod
    dt: float
    substeps: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractViolationError(f"Integrator dt must be positive, got {self.dt}")
        if self.substeps < 1:
            raise ContractViolationError(f"Integrator substeps must be >= 1, got {self.substeps}")

    @property
    def substep_dt(self) -> float:
        return self.dt / self.substeps


def _check_finite(values: np.ndarray, context: str, state: Optional[np.ndarray] = None) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise SimulationDivergedError(
            f"Non-finite {context}",
            state=None if state is None else np.asarray(state, dtype=np.float64),
        )
    return values


def _check_dt(dt: float) -> None:
    if dt < 0:
        raise ContractViolationError(f"Step size must be non-negative, got {dt}")


def leapfrog_step(q, p, dt: float, force_fn: ForceFn) -> Tuple[np.ndarray, np.ndarray]:
    """
    Kick-drift-kick leapfrog update for a separable system

    Args:
        q: Generalized positions
        p: Generalized velocities (mass folded into force_fn)
        dt: Step size
        force_fn: Acceleration as a function of position only

    Returns:
        Tuple of (q', p')
    """
    _check_dt(dt)
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    force = _check_finite(np.asarray(force_fn(q), dtype=np.float64), "force", q)
    p_half = p + 0.5 * dt * force
    q_next = q + dt * p_half
    force = _check_finite(np.asarray(force_fn(q_next), dtype=np.float64), "force", q_next)
    p_next = p_half + 0.5 * dt * force
    return q_next, p_next


def semi_implicit_euler_step(q, p, dt: float, force_fn: ForceFn) -> Tuple[np.ndarray, np.ndarray]:
    """Symplectic Euler: velocity kick first, then drift with the new velocity"""
    _check_dt(dt)
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    force = _check_finite(np.asarray(force_fn(q), dtype=np.float64), "force", q)
    p_next = p + dt * force
    return q + dt * p_next, p_next


def rk4_step(x, dt: float, deriv_fn: DerivFn) -> np.ndarray:
    """Classical four-stage Runge-Kutta update"""
    _check_dt(dt)
    x = np.asarray(x, dtype=np.float64)
    k1 = _check_finite(np.asarray(deriv_fn(x), dtype=np.float64), "derivative", x)
    k2 = _check_finite(np.asarray(deriv_fn(x + 0.5 * dt * k1), dtype=np.float64), "derivative", x)
    k3 = _check_finite(np.asarray(deriv_fn(x + 0.5 * dt * k2), dtype=np.float64), "derivative", x)
    k4 = _check_finite(np.asarray(deriv_fn(x + dt * k3), dtype=np.float64), "derivative", x)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def euler_step(x, dt: float, deriv_fn: DerivFn) -> np.ndarray:
    """Explicit forward Euler update"""
    _check_dt(dt)
    x = np.asarray(x, dtype=np.float64)
    return x + dt * _check_finite(np.asarray(deriv_fn(x), dtype=np.float64), "derivative", x)


def integrate(config: IntegratorConfig, q, p, accel_fn: AccelFn,
              separable: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Advance (q, p) over one control interval of config.dt

    Args:
        config: Scheme, interval and substep count
        q: Generalized positions
        p: Generalized velocities
        accel_fn: Acceleration as a function of (q, p); must ignore p when separable
        separable: Whether accel_fn is independent of velocity

    Raises:
        ContractViolationError: If a symplectic scheme is requested for a non-separable system
    """
    if config.method in SYMPLECTIC_METHODS and not separable:
        raise ContractViolationError(
            f"{config.method.value} requires a velocity-independent force"
        )
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    h = config.substep_dt
    n = q.size

    if config.method in SYMPLECTIC_METHODS:
        stepper = leapfrog_step if config.method == IntegratorMethod.LEAPFROG else semi_implicit_euler_step
        zero_velocity = np.zeros_like(p)
        force_fn = lambda x: accel_fn(x, zero_velocity)
        for _ in range(config.substeps):
            q, p = stepper(q, p, h, force_fn)
        return q, p

    def deriv(x: np.ndarray) -> np.ndarray:
        return np.concatenate([x[n:], accel_fn(x[:n], x[n:])])

    stepper = rk4_step if config.method == IntegratorMethod.RK4 else euler_step
    x = np.concatenate([q, p])
    for _ in range(config.substeps):
        x = stepper(x, h, deriv)
    return x[:n], x[n:]


def total_energy(system: HamiltonianSystem, q, p) -> float:
    """Kinetic plus potential energy"""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return float(system.kinetic_energy(q, p) + system.potential_energy(q))


def energy_drift(system: HamiltonianSystem, qs: Sequence, ps: Sequence) -> float:
    """Maximum relative energy error along a trajectory, |E_t - E_0| / |E_0|"""
    energies = np.array([total_energy(system, q, p) for q, p in zip(qs, ps)])
    scale = abs(energies[0]) if energies[0] != 0 else 1.0
    return float(np.max(np.abs(energies - energies[0])) / scale)


def round_trip_defect(env: Environment, s0: StateVector,
                      actions: Sequence[Union[Action, Sequence[float]]]) -> float:
    """
    Max-abs distance between s0 and the result of a forward rollout, conjugation, rollout of
    the reversed action sequence, and conjugation

    Zero for an exactly time-reversible environment and integrator pair.
    """
    if len(actions) == 0:
        raise ContractViolationError("round_trip_defect needs at least one action")
    involution = env.descriptor.involution
    actions = [env.clamp_action(a) for a in actions]

    state = s0
    for action in actions:
        state = env.step(state, action).next_state
    state = conjugate_state(state, involution)
    for action in reversed(actions):
        state = env.step(state, conjugate_action(action)).next_state
    state = conjugate_state(state, involution)

    defect = state.max_abs_difference(s0)
    logger.debug(f"Round-trip defect on {env.name} over {len(actions)} steps: {defect:.3e}")
    return defect
