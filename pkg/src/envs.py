"""
Concrete environments: pendulum and cartpole swing-up, the n-link manipulator with torque tiers,
and the tabular velocity chain used for exact reversibility checks
"""

from dataclasses import dataclass, field, fields
from functools import lru_cache, partial
from typing import Any, Dict, Optional, Tuple
import logging
import re

import numpy as np

from .core import Action, EnvDescriptor, Environment, Involution, RngStream, StateVector, replace_checked
from .dynamics import HamiltonianSystem, IntegratorConfig, integrate
from .workbench_models import (
    ConfigParseError, ContractViolationError, IntegratorMethod, TorqueTier, WorkbenchConfig
)

logger = logging.getLogger(__name__)


def _upright_reward(theta: float) -> float:
    return 0.5 * (1.0 + np.cos(theta))


# ---------------------------------------------------------------------------
# Pendulum
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PendulumParams:
    """Point-mass pendulum; theta is measured from upright"""
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    damping: float = 0.0
    torque_limit: float = 2.0

    def __post_init__(self):
        for name in ("mass", "length", "gravity", "torque_limit"):
            if not getattr(self, name) > 0:
                raise ContractViolationError(f"PendulumParams.{name} must be positive")
        if self.damping < 0:
            raise ContractViolationError("PendulumParams.damping must be non-negative")


def pendulum_acceleration(theta, theta_dot, torque: float, params: PendulumParams) -> np.ndarray:
    inertia = params.mass * params.length ** 2
    return (params.gravity / params.length) * np.sin(theta) + (torque - params.damping * theta_dot) / inertia


def pendulum_system(params: PendulumParams) -> HamiltonianSystem:
    inertia = params.mass * params.length ** 2
    return HamiltonianSystem(
        kinetic_energy=lambda q, p: 0.5 * inertia * float(np.sum(p ** 2)),
        potential_energy=lambda q: params.mass * params.gravity * params.length * float(np.sum(np.cos(q))),
        generalized_force=lambda q, p, tau: pendulum_acceleration(q, p, tau, params),
    )


def pendulum_reward(state: StateVector) -> float:
    return float(_upright_reward(state.config[0]))


class PendulumEnv(Environment):
    """Torque-limited pendulum swing-up; leapfrog-integrated when frictionless"""

    def __init__(self, params: Optional[PendulumParams] = None, name: str = "pendulum"):
        self.params = params or PendulumParams()
        method = IntegratorMethod.LEAPFROG if self.params.damping == 0 else IntegratorMethod.RK4
        self.integrator = IntegratorConfig(method, WorkbenchConfig.CONTROL_DT, WorkbenchConfig.SUBSTEPS)
        super().__init__(EnvDescriptor(
            name=name,
            state_dim=2,
            action_dim=1,
            dt=WorkbenchConfig.CONTROL_DT,
            episode_length=WorkbenchConfig.EPISODE_LENGTH,
            reward_fn=pendulum_reward,
            involution=Involution.negate_velocities(1),
        ))

    def reset(self, rng: RngStream) -> StateVector:
        theta = np.pi + rng.uniform(-0.1, 0.1)
        theta_dot = rng.uniform(-0.05, 0.05)
        return StateVector([theta], [theta_dot])

    def _advance(self, state: StateVector, action: Action) -> StateVector:
        torque = float(action.torques[0]) * self.params.torque_limit
        accel = lambda q, p: pendulum_acceleration(q, p, torque, self.params)
        q, p = integrate(self.integrator, state.config, state.velocity, accel,
                         separable=self.params.damping == 0)
        return StateVector(q, p)

    def observe(self, state: StateVector) -> np.ndarray:
        theta = state.config[0]
        return np.array([np.cos(theta), np.sin(theta), state.velocity[0]])

    def energy(self, state: StateVector) -> float:
        system = pendulum_system(self.params)
        return float(system.kinetic_energy(state.config, state.velocity) + system.potential_energy(state.config))


# ---------------------------------------------------------------------------
# Cartpole
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CartpoleParams:
    """Cart with a uniform pole; theta is measured from upright"""
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_length: float = 1.0
    gravity: float = 9.81
    track_halfwidth: float = 3.0
    friction_nominal: Tuple[float, float] = (5e-4, 2e-6)  # (slider, hinge) viscous coefficients
    friction_multiplier: float = 1.0
    force_limit: float = 10.0

    def __post_init__(self):
        for name in ("cart_mass", "pole_mass", "pole_length", "gravity", "track_halfwidth", "force_limit"):
            if not getattr(self, name) > 0:
                raise ContractViolationError(f"CartpoleParams.{name} must be positive")
        if self.friction_multiplier < 0:
            raise ContractViolationError("CartpoleParams.friction_multiplier must be non-negative")
        object.__setattr__(self, 'friction_nominal', tuple(float(c) for c in self.friction_nominal))
        if len(self.friction_nominal) != 2 or min(self.friction_nominal) < 0:
            raise ContractViolationError("CartpoleParams.friction_nominal needs two non-negative coefficients")

    @property
    def effective_friction(self) -> np.ndarray:
        return np.asarray(self.friction_nominal) * self.friction_multiplier


def _cartpole_accelerations(q: np.ndarray, v: np.ndarray, force: float, params: CartpoleParams) -> np.ndarray:
    _, theta = q
    x_dot, theta_dot = v
    c_slider, c_hinge = params.effective_friction
    total_mass = params.cart_mass + params.pole_mass
    ml = params.pole_mass * params.pole_length / 2.0
    pole_inertia = params.pole_mass * params.pole_length ** 2 / 3.0
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    rhs_cart = force - c_slider * x_dot + ml * sin_t * theta_dot ** 2
    rhs_pole = ml * params.gravity * sin_t - c_hinge * theta_dot
    det = total_mass * pole_inertia - (ml * cos_t) ** 2
    x_ddot = (pole_inertia * rhs_cart - ml * cos_t * rhs_pole) / det
    theta_ddot = (total_mass * rhs_pole - ml * cos_t * rhs_cart) / det
    return np.array([x_ddot, theta_ddot])


def cartpole_dynamics(state: StateVector, action, params: CartpoleParams) -> np.ndarray:
    """
    State derivative (x_dot, theta_dot, x_ddot, theta_ddot) of the cart-pole

    Args:
        state: Configuration (x, theta) and velocity (x_dot, theta_dot)
        action: Normalized force command, scaled by params.force_limit
        params: Physical parameters including the friction multiplier
    """
    torques = action.torques if isinstance(action, Action) else np.atleast_1d(action)
    force = float(np.clip(torques[0], -1.0, 1.0)) * params.force_limit
    accel = _cartpole_accelerations(state.config, state.velocity, force, params)
    return np.concatenate([state.velocity, accel])


def cartpole_energy(state: StateVector, params: CartpoleParams) -> float:
    _, theta = state.config
    x_dot, theta_dot = state.velocity
    ml = params.pole_mass * params.pole_length / 2.0
    kinetic = (0.5 * (params.cart_mass + params.pole_mass) * x_dot ** 2
               + ml * np.cos(theta) * x_dot * theta_dot
               + 0.5 * params.pole_mass * params.pole_length ** 2 / 3.0 * theta_dot ** 2)
    return float(kinetic + ml * params.gravity * np.cos(theta))


class CartpoleEnv(Environment):
    """Cart-pole swing-up with viscous joint damping scaled by a friction multiplier"""

    def __init__(self, params: Optional[CartpoleParams] = None, name: str = "cartpole"):
        self.params = params or CartpoleParams()
        self.integrator = IntegratorConfig(IntegratorMethod.RK4, WorkbenchConfig.CONTROL_DT,
                                           WorkbenchConfig.SUBSTEPS)
        super().__init__(EnvDescriptor(
            name=name,
            state_dim=4,
            action_dim=1,
            dt=WorkbenchConfig.CONTROL_DT,
            episode_length=WorkbenchConfig.EPISODE_LENGTH,
            reward_fn=self.reward,
            involution=Involution.negate_velocities(2),
        ))

    def reward(self, state: StateVector) -> float:
        x, theta = state.config
        centered = max(0.0, 1.0 - (x / self.params.track_halfwidth) ** 2)
        return float(_upright_reward(theta) * centered)

    def reset(self, rng: RngStream) -> StateVector:
        x = rng.uniform(-0.05, 0.05)
        theta = np.pi + rng.uniform(-0.1, 0.1)
        velocity = rng.uniform(-0.05, 0.05, size=2)
        return StateVector([x, theta], velocity)

    def _advance(self, state: StateVector, action: Action) -> StateVector:
        force = float(action.torques[0]) * self.params.force_limit
        accel = lambda q, v: _cartpole_accelerations(q, v, force, self.params)
        q, v = integrate(self.integrator, state.config, state.velocity, accel, separable=False)
        return StateVector(q, v)

    def observe(self, state: StateVector) -> np.ndarray:
        x, theta = state.config
        return np.array([x, np.cos(theta), np.sin(theta), *state.velocity])

    def energy(self, state: StateVector) -> float:
        return cartpole_energy(state, self.params)


# ---------------------------------------------------------------------------
# N-link manipulator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManipulatorParams:
    """Planar chain of identical uniform rods; joint angles are relative, link 1 from upright"""
    n_links: int = 2
    link_mass: float = 0.5
    link_length: float = 0.5
    gravity: float = 9.81
    torque_tier: TorqueTier = TorqueTier.INTERMEDIATE

    def __post_init__(self):
        if self.n_links not in (2, 3, 4):
            raise ContractViolationError(f"n_links must be 2, 3 or 4, got {self.n_links}")
        for name in ("link_mass", "link_length", "gravity"):
            if not getattr(self, name) > 0:
                raise ContractViolationError(f"ManipulatorParams.{name} must be positive")
        if not isinstance(self.torque_tier, TorqueTier):
            object.__setattr__(self, 'torque_tier', TorqueTier(str(self.torque_tier).lower()))

    @property
    def total_length(self) -> float:
        return self.n_links * self.link_length


@dataclass(frozen=True)
class _ChainConstants:
    lever: np.ndarray        # lever[k, j]: contribution of link j's angle to link k's centre of mass
    inertia: np.ndarray      # A[a, b] with M_abs = A * cos(phi_a - phi_b)
    gravity: np.ndarray      # coefficient of -sin(phi_a) in the potential gradient
    to_absolute: np.ndarray  # phi = S q


@lru_cache(maxsize=32)
def _chain_constants(params: ManipulatorParams) -> _ChainConstants:
    n, m, l = params.n_links, params.link_mass, params.link_length
    lever = np.tril(np.full((n, n), l), k=-1) + np.eye(n) * (l / 2.0)
    inertia = m * lever.T @ lever + np.eye(n) * (m * l ** 2 / 12.0)
    gravity = params.gravity * m * lever.sum(axis=0)
    return _ChainConstants(lever, inertia, gravity, np.tril(np.ones((n, n))))


def static_holding_torques(params: ManipulatorParams) -> np.ndarray:
    """Torque each joint needs to hold the fully extended arm horizontal"""
    n, m, l = params.n_links, params.link_mass, params.link_length
    return np.array([
        params.gravity * m * sum((k - i) * l + l / 2.0 for k in range(i, n))
        for i in range(n)
    ])


def torque_limits(params: ManipulatorParams) -> np.ndarray:
    return params.torque_tier.holding_multiple * static_holding_torques(params)


def mass_matrix(q, params: ManipulatorParams) -> np.ndarray:
    """Joint-space mass matrix M(q)"""
    consts = _chain_constants(params)
    phi = consts.to_absolute @ np.asarray(q, dtype=np.float64)
    m_abs = consts.inertia * np.cos(phi[:, None] - phi[None, :])
    return consts.to_absolute.T @ m_abs @ consts.to_absolute


def bias_forces(q, qdot, params: ManipulatorParams) -> np.ndarray:
    """Joint-space C(q, qdot) qdot + g(q)"""
    consts = _chain_constants(params)
    phi = consts.to_absolute @ np.asarray(q, dtype=np.float64)
    phi_dot = consts.to_absolute @ np.asarray(qdot, dtype=np.float64)
    coriolis = (consts.inertia * np.sin(phi[:, None] - phi[None, :])) @ (phi_dot ** 2)
    gravity = -consts.gravity * np.sin(phi)
    return consts.to_absolute.T @ (coriolis + gravity)


def manipulator_dynamics(q, qdot, tau, params: ManipulatorParams) -> np.ndarray:
    """
    Joint accelerations qddot = M(q)^-1 (tau - C(q, qdot) qdot - g(q))

    Raises:
        ContractViolationError: If the mass matrix is singular
    """
    tau = np.clip(np.asarray(tau, dtype=np.float64), -torque_limits(params), torque_limits(params))
    mass = mass_matrix(q, params)
    try:
        return np.linalg.solve(mass, tau - bias_forces(q, qdot, params))
    except np.linalg.LinAlgError as e:
        raise ContractViolationError("Singular manipulator mass matrix", original_error=e)


def tip_height(q, params: ManipulatorParams) -> float:
    phi = np.cumsum(np.asarray(q, dtype=np.float64))
    return float(params.link_length * np.sum(np.cos(phi)))


def manipulator_energy(q, qdot, params: ManipulatorParams) -> float:
    consts = _chain_constants(params)
    phi = consts.to_absolute @ np.asarray(q, dtype=np.float64)
    phi_dot = consts.to_absolute @ np.asarray(qdot, dtype=np.float64)
    kinetic = 0.5 * phi_dot @ (consts.inertia * np.cos(phi[:, None] - phi[None, :])) @ phi_dot
    heights = consts.lever @ np.cos(phi)
    return float(kinetic + params.gravity * params.link_mass * np.sum(heights))


def manipulator_reward(state: StateVector, params: ManipulatorParams) -> float:
    height = tip_height(state.config, params)
    return float(np.clip((height / params.total_length + 1.0) / 2.0, 0.0, 1.0))


class ManipulatorEnv(Environment):
    """Fully actuated planar n-link arm; the task is to hold the arm upright"""

    def __init__(self, params: Optional[ManipulatorParams] = None, name: Optional[str] = None):
        self.params = params or ManipulatorParams()
        self.limits = torque_limits(self.params)
        self.integrator = IntegratorConfig(IntegratorMethod.RK4, WorkbenchConfig.CONTROL_DT,
                                           WorkbenchConfig.SUBSTEPS)
        n = self.params.n_links
        super().__init__(EnvDescriptor(
            name=name or f"manipulator-{n}-{self.params.torque_tier.value}",
            state_dim=2 * n,
            action_dim=n,
            dt=WorkbenchConfig.CONTROL_DT,
            episode_length=WorkbenchConfig.EPISODE_LENGTH,
            reward_fn=partial(manipulator_reward, params=self.params),
            involution=Involution.negate_velocities(n),
        ))

    def reset(self, rng: RngStream) -> StateVector:
        n = self.params.n_links
        q = np.zeros(n)
        q[0] = np.pi
        q += rng.uniform(-0.05, 0.05, size=n)
        return StateVector(q, np.zeros(n))

    def _advance(self, state: StateVector, action: Action) -> StateVector:
        tau = action.torques * self.limits
        accel = lambda q, v: manipulator_dynamics(q, v, tau, self.params)
        q, v = integrate(self.integrator, state.config, state.velocity, accel, separable=False)
        return StateVector(q, v)

    def observe(self, state: StateVector) -> np.ndarray:
        return np.concatenate([np.cos(state.config), np.sin(state.config), state.velocity])

    def energy(self, state: StateVector) -> float:
        return manipulator_energy(state.config, state.velocity, self.params)


def direct_lift_peak_height(params: ManipulatorParams, steps: int = 250,
                            gain: Tuple[float, float] = (5.0, 1.0)) -> float:
    """
    Peak normalized tip height reached by a direct-lift controller

    The base joint is driven at full positive torque while the outer joints run a saturated
    PD law holding the arm extended. Used to confirm the tier ratios: overpowered arms lift
    straight up, underpowered arms cannot raise the tip above the base.
    """
    env = ManipulatorEnv(params)
    q = np.zeros(params.n_links)
    q[0] = np.pi
    state = StateVector(q, np.zeros(params.n_links))
    kp, kd = gain
    peak = tip_height(state.config, params) / params.total_length
    for _ in range(steps):
        command = np.empty(params.n_links)
        command[0] = 1.0
        command[1:] = -kp * state.config[1:] - kd * state.velocity[1:]
        state = env.step(state, command).next_state
        peak = max(peak, tip_height(state.config, params) / params.total_length)
    logger.info(f"Direct lift on {env.name}: peak normalized tip height {peak:.3f}")
    return peak


# ---------------------------------------------------------------------------
# Tabular MDPs
# ---------------------------------------------------------------------------

@dataclass
class TabularMDP:
    """Finite MDP with explicit kernel P[a][s][s'] and conjugate involutions"""
    n_states: int
    n_actions: int
    kernel: np.ndarray
    reward: np.ndarray
    state_involution: np.ndarray
    action_involution: np.ndarray
    admissible: Optional[np.ndarray] = None  # admissible[a][s]; pairs outside are excluded from checks
    state_labels: Tuple[str, ...] = field(default_factory=tuple)
    action_values: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.state_involution = np.asarray(self.state_involution, dtype=np.int64)
        self.action_involution = np.asarray(self.action_involution, dtype=np.int64)
        if self.admissible is None:
            self.admissible = np.ones((self.n_actions, self.n_states), dtype=bool)
        self.admissible = np.asarray(self.admissible, dtype=bool)

        if self.kernel.shape != (self.n_actions, self.n_states, self.n_states):
            raise ContractViolationError(f"Kernel shape {self.kernel.shape} does not match "
                                         f"({self.n_actions}, {self.n_states}, {self.n_states})")
        if not np.allclose(self.kernel.sum(axis=2), 1.0, rtol=0.0, atol=1e-12):
            raise ContractViolationError("Every kernel row must sum to 1")
        validate_involution(self.state_involution, self.n_states, "state")
        validate_involution(self.action_involution, self.n_actions, "action")
        if not self.state_labels:
            self.state_labels = tuple(str(s) for s in range(self.n_states))
        if not self.action_values:
            self.action_values = tuple(float(a) for a in range(self.n_actions))


def validate_involution(perm: np.ndarray, size: int, what: str) -> None:
    """Require a self-inverse permutation of range(size)"""
    perm = np.asarray(perm)
    if perm.shape != (size,) or sorted(perm.tolist()) != list(range(size)):
        raise ContractViolationError(f"The {what} involution is not a permutation of {size} elements")
    if not np.array_equal(perm[perm], np.arange(size)):
        raise ContractViolationError(f"The {what} involution is not self-inverse")


CHAIN_VELOCITIES = (-2, -1, 0, 1, 2)
CHAIN_ACTIONS = (-2, 0, 2)


def chain_state_index(x: int, v: int) -> int:
    return x * len(CHAIN_VELOCITIES) + (v + 2)


def build_velocity_chain(halfwidth: int, breaking: bool = False) -> TabularMDP:
    """
    Deterministic position-velocity lattice that is exactly dynamically reversible

    Positions live on a ring of 2 * halfwidth sites and velocities in {-2..2}. Action a in
    {-2, 0, 2} updates v' = clamp(v + a) and x' = wrap(x + v + a / 2). Pairs where the clamp
    engages are marked inadmissible. With breaking=True an absorbing crash state is entered
    from x = 0 at |v| = 2, which violates reversibility.
    """
    if halfwidth < 2:
        raise ContractViolationError(f"halfwidth must be >= 2, got {halfwidth}")
    ring = 2 * halfwidth
    n_lattice = ring * len(CHAIN_VELOCITIES)
    n_states = n_lattice + (1 if breaking else 0)
    crash = n_lattice
    n_actions = len(CHAIN_ACTIONS)

    kernel = np.zeros((n_actions, n_states, n_states))
    admissible = np.ones((n_actions, n_states), dtype=bool)
    reward = np.zeros(n_states)
    involution = np.arange(n_states)
    labels = []

    for x in range(ring):
        for v in CHAIN_VELOCITIES:
            s = chain_state_index(x, v)
            labels.append(f"({x},{v})")
            reward[s] = 1.0 if x == 0 else 0.0
            involution[s] = chain_state_index(x, -v)
            for a_index, a in enumerate(CHAIN_ACTIONS):
                if breaking and x == 0 and abs(v) == 2:
                    kernel[a_index, s, crash] = 1.0
                    continue
                v_next = int(np.clip(v + a, -2, 2))
                admissible[a_index, s] = v_next == v + a
                x_next = (x + v + a // 2) % ring
                kernel[a_index, s, chain_state_index(x_next, v_next)] = 1.0

    if breaking:
        labels.append("crash")
        kernel[:, crash, crash] = 1.0

    return TabularMDP(
        n_states=n_states,
        n_actions=n_actions,
        kernel=kernel,
        reward=reward,
        state_involution=involution,
        action_involution=np.arange(n_actions),
        admissible=admissible,
        state_labels=tuple(labels),
        action_values=tuple(float(a) for a in CHAIN_ACTIONS),
    )


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

_MANIPULATOR_NAME = re.compile(r"^manipulator-([234])-(um|im|om)$")
FIXED_ENV_NAMES = ("pendulum", "cartpole", "cartpole-nominal", "cartpole-high-friction")
VERIFICATION_ENV_NAMES = ("velocity-chain",)


def _coerce(value: Any, default: Any, key: str) -> Any:
    if isinstance(default, TorqueTier):
        try:
            return value if isinstance(value, TorqueTier) else TorqueTier(str(value).lower())
        except ValueError as e:
            raise ConfigParseError(f"Invalid torque tier for {key}: {value}", key=key, original_error=e)
    try:
        if isinstance(default, tuple):
            items = value if isinstance(value, (list, tuple)) else str(value).split(",")
            return tuple(float(v) for v in items)
        if isinstance(default, bool):
            return value if isinstance(value, bool) else str(value).lower() in ("true", "on", "1")
        return type(default)(value)
    except (TypeError, ValueError) as e:
        raise ConfigParseError(f"Type mismatch for {key}: {value!r}", key=key, original_error=e)


def _apply_overrides(params, overrides: Dict[str, Any]):
    known = {f.name: getattr(params, f.name) for f in fields(params)}
    updates = {}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigParseError(f"Unknown environment parameter env.{key}", key=f"env.{key}")
        updates[key] = _coerce(value, known[key], f"env.{key}")
    return replace_checked(params, updates, "env")


def make_env(name: str, overrides: Optional[Dict[str, Any]] = None) -> Environment:
    """
    Build an environment by name

    Args:
        name: pendulum, cartpole, cartpole-nominal, cartpole-high-friction or
            manipulator-{2,3,4}-{um,im,om}
        overrides: Parameter-record field overrides (values may be strings)

    Raises:
        ConfigParseError: If the name or an override is not recognized
    """
    overrides = dict(overrides or {})
    if name == "pendulum":
        return PendulumEnv(_apply_overrides(PendulumParams(), overrides), name=name)
    if name.startswith("cartpole") and name in FIXED_ENV_NAMES:
        multiplier = {"cartpole": 0.0, "cartpole-nominal": 1.0, "cartpole-high-friction": 2000.0}[name]
        params = _apply_overrides(CartpoleParams(friction_multiplier=multiplier), overrides)
        return CartpoleEnv(params, name=name)
    match = _MANIPULATOR_NAME.match(name)
    if match:
        base = ManipulatorParams(n_links=int(match.group(1)), torque_tier=TorqueTier(match.group(2)))
        return ManipulatorEnv(_apply_overrides(base, overrides), name=name)
    if name in VERIFICATION_ENV_NAMES:
        raise ConfigParseError(f"{name} is a tabular MDP for verification only", key="env.name")
    raise ConfigParseError(f"Unknown environment: {name}", key="env.name")
