"""
Soft actor-critic on a NumPy multilayer perceptron with manual backpropagation

The actor is a tanh-squashed Gaussian, the critics are a twin pair with soft-updated
targets, and the entropy temperature is tuned in log space.
"""

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from .core import RngStream
from .tsda import ReplayBuffer, TransitionBatch
from .workbench_models import CheckpointFormatError, ContractViolationError, TrainingDivergedError

logger = logging.getLogger(__name__)

SQUASH_EPSILON = 1e-6
ACTION_MARGIN = 1e-12
LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_MAGIC = b"TSDAACT1"


@dataclass(frozen=True)
class LearnerConfig:
    """Soft actor-critic hyperparameters"""
    batch_size: int = 128
    discount: float = 0.99
    critic_lr: float = 1e-3
    actor_lr: float = 1e-3
    critic_target_updates_per_env_step: int = 2
    actor_updates_per_env_step: int = 2
    q_soft_update_rate: float = 0.01
    actor_log_std_bounds: Tuple[float, float] = (-10.0, 2.0)
    temperature_lr: float = 1e-4
    temperature_adam_beta1: float = 0.5
    initial_temperature: float = 0.1
    optimizer: str = "adam"
    hidden_sizes: Tuple[int, ...] = (256, 256)

    def __post_init__(self):
        object.__setattr__(self, 'actor_log_std_bounds', tuple(float(v) for v in self.actor_log_std_bounds))
        object.__setattr__(self, 'hidden_sizes', tuple(int(v) for v in self.hidden_sizes))
        if not 0.0 < self.discount < 1.0:
            raise ContractViolationError(f"discount must lie in (0, 1), got {self.discount}")
        if not 0.0 < self.q_soft_update_rate <= 1.0:
            raise ContractViolationError(f"q_soft_update_rate must lie in (0, 1], got {self.q_soft_update_rate}")
        if self.batch_size < 1:
            raise ContractViolationError(f"batch_size must be positive, got {self.batch_size}")
        for name in ("critic_lr", "actor_lr", "temperature_lr", "initial_temperature"):
            if not getattr(self, name) > 0:
                raise ContractViolationError(f"{name} must be positive")
        if self.critic_target_updates_per_env_step < 0 or self.actor_updates_per_env_step < 0:
            raise ContractViolationError("Update counts must be non-negative")
        low, high = self.actor_log_std_bounds
        if len(self.actor_log_std_bounds) != 2 or not low < high:
            raise ContractViolationError(f"Invalid log-std bounds {self.actor_log_std_bounds}")
        if not 0.0 <= self.temperature_adam_beta1 < 1.0:
            raise ContractViolationError("temperature_adam_beta1 must lie in [0, 1)")
        if self.optimizer != "adam":
            raise ContractViolationError(f"Unsupported optimizer {self.optimizer}")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ContractViolationError(f"Invalid hidden sizes {self.hidden_sizes}")

    def to_dict(self) -> Dict:
        """Convert to dictionary for JSON serialization"""
        result = asdict(self)
        result['actor_log_std_bounds'] = list(self.actor_log_std_bounds)
        result['hidden_sizes'] = list(self.hidden_sizes)
        return result


# ---------------------------------------------------------------------------
# Multilayer perceptron
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    """Weights (out, in) and biases per layer; ReLU on hidden layers, identity output"""
    sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ContractViolationError(f"Layer count does not match sizes {self.sizes}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i + 1], self.sizes[i]) or b.shape != (self.sizes[i + 1],):
                raise ContractViolationError(f"Layer {i} shapes {w.shape}/{b.shape} do not match sizes {self.sizes}")

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def arrays(self) -> List[np.ndarray]:
        """Parameter arrays in optimizer order (w0, b0, w1, b1, ...)"""
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> 'MlpParams':
        return MlpParams(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class MlpGradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]


def mlp_init(sizes: Sequence[int], rng: RngStream) -> MlpParams:
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(tuple(sizes), weights, biases)


def _as_batch(x, width: int, what: str) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x.reshape(1, -1) if single else x
    if batch.ndim != 2 or batch.shape[1] != width:
        raise ContractViolationError(f"{what} has shape {x.shape}, expected trailing dimension {width}")
    return batch, single


def mlp_forward(params: MlpParams, x) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
    """Forward pass keeping (layer input, pre-activation) per layer for backprop"""
    a, single = _as_batch(x, params.input_dim, "MLP input")
    cache = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        cache.append((a, z))
        a = z if i == last else np.maximum(z, 0.0)
    return (a[0] if single else a), cache


def mlp_apply(params: MlpParams, x) -> np.ndarray:
    return mlp_forward(params, x)[0]


def mlp_backprop(params: MlpParams, x, output_gradient,
                 cache: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None) -> MlpGradients:
    """
    Reverse-mode gradients of sum(output_gradient * mlp_apply(params, x))

    Args:
        params: Network parameters
        x: Input row or (batch, input_dim) matrix
        output_gradient: Gradient with respect to the output, same leading shape as x
        cache: Forward cache for x, recomputed when omitted

    Returns:
        MlpGradients with per-layer weight and bias gradients and the input gradient

    Raises:
        ContractViolationError: On shape mismatches
    """
    a_in, single = _as_batch(x, params.input_dim, "MLP input")
    grad, _ = _as_batch(output_gradient, params.output_dim, "Output gradient")
    if grad.shape[0] != a_in.shape[0]:
        raise ContractViolationError(f"Output gradient batch {grad.shape[0]} does not match input batch {a_in.shape[0]}")
    if cache is None:
        _, cache = mlp_forward(params, a_in)

    n_layers = len(params.weights)
    d_weights: List[np.ndarray] = [None] * n_layers
    d_biases: List[np.ndarray] = [None] * n_layers
    dz = grad
    for i in reversed(range(n_layers)):
        a, _ = cache[i]
        d_weights[i] = dz.T @ a
        d_biases[i] = dz.sum(axis=0)
        da = dz @ params.weights[i]
        if i > 0:
            dz = da * (cache[i - 1][1] > 0)
    return MlpGradients(d_weights, d_biases, da[0] if single else da)


def soft_update(target: MlpParams, source: MlpParams, rate: float) -> MlpParams:
    """In place target <- (1 - rate) * target + rate * source"""
    if target.sizes != source.sizes:
        raise ContractViolationError(f"Cannot blend networks of sizes {target.sizes} and {source.sizes}")
    if not 0.0 <= rate <= 1.0:
        raise ContractViolationError(f"Soft update rate must lie in [0, 1], got {rate}")
    for t, s in zip(target.arrays(), source.arrays()):
        t *= (1.0 - rate)
        t += rate * s
    return target


class AdamOptimizer:
    """Adaptive-moment gradient descent over a fixed list of parameter arrays"""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: List[np.ndarray] = []
        self.v: List[np.ndarray] = []

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(params) != len(self.m):
            raise ContractViolationError("Optimizer was built for a different parameter list")
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def squashed_gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray,
                               noise: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Reparameterized tanh-Gaussian sample with its log density

    u = mean + exp(log_std) * noise, action = tanh(u), and the log density carries the
    change-of-variables term -sum log(1 - tanh(u)^2 + eps).

    Returns:
        Tuple of (action, log_prob, d log_prob / d mean, d log_prob / d log_std) with the
        noise held fixed
    """
    std = np.exp(log_std)
    u = mean + std * noise
    action = np.tanh(u)
    one_minus = 1.0 - action ** 2
    gaussian = -0.5 * noise ** 2 - log_std - 0.5 * LOG_2PI
    log_prob = np.sum(gaussian - np.log(one_minus + SQUASH_EPSILON), axis=-1)
    d_u = 2.0 * action * one_minus / (one_minus + SQUASH_EPSILON)
    return action, log_prob, d_u, -1.0 + d_u * std * noise


class PolicySample(NamedTuple):
    actions: np.ndarray
    log_prob: np.ndarray
    squashed: np.ndarray
    noise: np.ndarray
    mean: np.ndarray
    log_std: np.ndarray
    std_in_bounds: np.ndarray
    d_log_prob_mean: np.ndarray
    d_log_prob_log_std: np.ndarray
    cache: list


class SquashedGaussianPolicy:
    """Actor network emitting per-dimension mean and log-std of a tanh-squashed Gaussian"""

    def __init__(self, params: MlpParams, log_std_bounds: Tuple[float, float] = (-10.0, 2.0)):
        if params.output_dim % 2:
            raise ContractViolationError("Actor output must hold a mean and a log-std per action")
        self.params = params
        self.log_std_bounds = tuple(float(v) for v in log_std_bounds)

    @property
    def action_dim(self) -> int:
        return self.params.output_dim // 2

    @property
    def observation_dim(self) -> int:
        return self.params.input_dim

    def distribution(self, observations) -> Tuple[np.ndarray, np.ndarray, np.ndarray, list]:
        """Mean, clamped log-std, in-bounds mask of the raw log-std, and the forward cache"""
        batch, _ = _as_batch(observations, self.observation_dim, "Observation")
        out, cache = mlp_forward(self.params, batch)
        mean, raw = out[:, :self.action_dim], out[:, self.action_dim:]
        low, high = self.log_std_bounds
        log_std = np.clip(raw, low, high)
        return mean, log_std, (raw >= low) & (raw <= high), cache

    def sample(self, observations, rng: RngStream) -> PolicySample:
        batch, _ = _as_batch(observations, self.observation_dim, "Observation")
        return self.reparameterize(batch, rng.normal(size=(batch.shape[0], self.action_dim)))

    def reparameterize(self, observations, noise: np.ndarray) -> PolicySample:
        """Sample driven by caller-supplied standard normal noise"""
        mean, log_std, in_bounds, cache = self.distribution(observations)
        if noise.shape != mean.shape:
            raise ContractViolationError(f"Noise has shape {noise.shape}, expected {mean.shape}")
        squashed, log_prob, d_mean, d_log_std = squashed_gaussian_log_prob(mean, log_std, noise)
        actions = np.clip(squashed, -1.0 + ACTION_MARGIN, 1.0 - ACTION_MARGIN)
        return PolicySample(actions, log_prob, squashed, noise, mean, log_std, in_bounds,
                            d_mean, d_log_std, cache)

    def act(self, observation, rng: Optional[RngStream] = None, deterministic: bool = True) -> np.ndarray:
        """Action for one observation; tanh of the mean when deterministic"""
        if deterministic:
            mean, _, _, _ = self.distribution(np.asarray(observation)[None, :])
            return np.tanh(mean[0])
        return self.sample(np.asarray(observation)[None, :], rng).actions[0]


def actor_sample(policy: SquashedGaussianPolicy, observation, rng: RngStream) -> Tuple[np.ndarray, float]:
    """Draw one squashed action and its log-probability"""
    drawn = policy.sample(np.asarray(observation)[None, :], rng)
    return drawn.actions[0], float(drawn.log_prob[0])


class UniformRandomPolicy:
    """Baseline acting uniformly at random in [-1, 1]"""

    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    def act(self, observation, rng: RngStream, deterministic: bool = True) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=self.action_dim)


# ---------------------------------------------------------------------------
# Soft actor-critic
# ---------------------------------------------------------------------------

Featurizer = Callable[[np.ndarray], np.ndarray]


def _identity(states: np.ndarray) -> np.ndarray:
    return states


def critic_values(critic: MlpParams, observations: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return mlp_apply(critic, np.concatenate([observations, actions], axis=1))[:, 0]


def critic_target(batch: TransitionBatch, critic_targets: Sequence[MlpParams], policy: SquashedGaussianPolicy,
                  temperature: float, discount: float, rng: RngStream,
                  featurize: Featurizer = _identity) -> np.ndarray:
    """
    Soft Bellman backup y = r + discount * (1 - terminal) * (min Q'(s', a') - temperature * log pi(a'|s'))

    a' is drawn fresh from the policy at s'.
    """
    next_obs = featurize(batch.next_states)
    drawn = policy.sample(next_obs, rng)
    q_next = np.minimum(*(critic_values(c, next_obs, drawn.actions) for c in critic_targets))
    soft_value = q_next - temperature * drawn.log_prob
    continuing = 1.0 - batch.terminals.astype(np.float64)
    bootstrap = np.where(continuing > 0, discount * continuing * soft_value, 0.0)
    return batch.rewards + bootstrap



def critic_loss_gradients(critic: MlpParams, inputs: np.ndarray,
                          targets: np.ndarray) -> Tuple[float, MlpGradients]:
    """Mean squared Bellman error of one critic against fixed targets and its parameter gradients"""
    q, cache = mlp_forward(critic, inputs)
    error = q[:, 0] - targets
    grads = mlp_backprop(critic, inputs, (2.0 * error / len(targets))[:, None], cache)
    return float(np.mean(error ** 2)), grads


def actor_loss_gradients(policy: SquashedGaussianPolicy, critics: Sequence[MlpParams], observations: np.ndarray,
                         noise: np.ndarray, temperature: float) -> Tuple[float, MlpGradients, PolicySample]:
    """
    Actor objective mean(temperature * log pi(a|s) - min_i Q_i(s, a)) for a = tanh(mean + std * noise)
    and its gradients with respect to the actor parameters

    The pathwise derivative runs through the smaller critic's action gradient, the tanh
    squash and the log-std clamp, which passes no gradient outside its bounds.
    """
    n, obs_dim = observations.shape
    drawn = policy.reparameterize(observations, noise)
    inputs = np.concatenate([observations, drawn.squashed], axis=1)
    q_values, q_action_grads = [], []
    for critic in critics:
        q, cache = mlp_forward(critic, inputs)
        q_values.append(q[:, 0])
        q_action_grads.append(mlp_backprop(critic, inputs, np.ones((n, 1)), cache).input[:, obs_dim:])
    use_first = (q_values[0] <= q_values[1])[:, None]
    q_min = np.minimum(q_values[0], q_values[1])
    dq_da = np.where(use_first, q_action_grads[0], q_action_grads[1])

    loss = float(np.mean(temperature * drawn.log_prob - q_min))
    dq_du = dq_da * (1.0 - drawn.squashed ** 2)
    std_noise = np.exp(drawn.log_std) * drawn.noise
    d_mean = (temperature * drawn.d_log_prob_mean - dq_du) / n
    d_log_std = (temperature * drawn.d_log_prob_log_std - dq_du * std_noise) / n * drawn.std_in_bounds
    grads = mlp_backprop(policy.params, observations, np.concatenate([d_mean, d_log_std], axis=1), drawn.cache)
    return loss, grads, drawn


def temperature_loss_gradient(log_temperature: float, log_prob: np.ndarray,
                              target_entropy: float) -> Tuple[float, float]:
    """Loss -alpha * mean(log pi + target_entropy) with alpha = exp(log_temperature), and d loss / d log alpha"""
    loss = float(-math.exp(log_temperature) * np.mean(log_prob + target_entropy))
    return loss, loss


@dataclass(frozen=True)
class LossRecord:
    critic_loss: float
    actor_loss: float
    temperature_loss: float
    temperature: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.critic_loss, self.actor_loss,
                                              self.temperature_loss, self.temperature))


class SoftActorCritic:
    """
    Actor, twin critics with target copies, log-temperature and their optimizers

    Batches hold flat states; `featurize` maps them to network observations.
    """

    def __init__(self, observation_dim: int, action_dim: int, config: Optional[LearnerConfig] = None,
                 rng: Optional[RngStream] = None, featurize: Optional[Featurizer] = None):
        self.config = config or LearnerConfig()
        rng = rng or RngStream(0)
        hidden = self.config.hidden_sizes
        self.observation_dim = observation_dim
        self.action_dim = action_dim
        self.policy = SquashedGaussianPolicy(mlp_init((observation_dim, *hidden, 2 * action_dim), rng),
                                             self.config.actor_log_std_bounds)
        self.critics = [mlp_init((observation_dim + action_dim, *hidden, 1), rng) for _ in range(2)]
        self.critic_targets = [c.copy() for c in self.critics]
        self.log_temperature = np.array([math.log(self.config.initial_temperature)])
        self.target_entropy = -float(action_dim)

        self.actor_optimizer = AdamOptimizer(self.config.actor_lr)
        self.critic_optimizers = [AdamOptimizer(self.config.critic_lr) for _ in self.critics]
        self.temperature_optimizer = AdamOptimizer(self.config.temperature_lr,
                                                   beta1=self.config.temperature_adam_beta1)
        self.featurize = featurize or _identity
        self.updates = 0

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature[0]))

    def update_critics(self, batch: TransitionBatch, rng: RngStream) -> float:
        y = critic_target(batch, self.critic_targets, self.policy, self.temperature,
                          self.config.discount, rng, self.featurize)
        inputs = np.concatenate([self.featurize(batch.states), batch.actions], axis=1)
        losses = []
        for critic, optimizer in zip(self.critics, self.critic_optimizers):
            loss, grads = critic_loss_gradients(critic, inputs, y)
            losses.append(loss)
            optimizer.step(critic.arrays(), grads.arrays())
        return float(np.mean(losses))

    def update_actor_and_temperature(self, batch: TransitionBatch, rng: RngStream) -> Tuple[float, float]:
        obs = self.featurize(batch.states)
        noise = rng.normal(size=(obs.shape[0], self.action_dim))
        actor_loss, grads, drawn = actor_loss_gradients(self.policy, self.critics, obs, noise, self.temperature)
        self.actor_optimizer.step(self.policy.params.arrays(), grads.arrays())

        temperature_loss, d_log_temperature = temperature_loss_gradient(
            float(self.log_temperature[0]), drawn.log_prob, self.target_entropy)
        self.temperature_optimizer.step([self.log_temperature], [np.array([d_log_temperature])])
        return actor_loss, temperature_loss

    def soft_update_targets(self) -> None:
        for target, critic in zip(self.critic_targets, self.critics):
            soft_update(target, critic, self.config.q_soft_update_rate)

    def parameters_finite(self) -> bool:
        return (self.policy.params.is_finite() and all(c.is_finite() for c in self.critics)
                and bool(np.all(np.isfinite(self.log_temperature))))


def update_step(learner: SoftActorCritic, buffer: ReplayBuffer, rng: RngStream) -> LossRecord:
    """
    All gradient updates owed for one environment step

    Runs the configured number of critic updates (each followed by a soft target update) and
    actor plus temperature updates, each on a fresh minibatch.

    Raises:
        BufferNotReadyError: If the buffer holds fewer transitions than a batch
        TrainingDivergedError: If a loss or parameter becomes non-finite
    """
    config = learner.config
    critic_losses, actor_losses, temperature_losses = [], [], []
    for k in range(max(config.critic_target_updates_per_env_step, config.actor_updates_per_env_step)):
        batch = buffer.sample(config.batch_size, rng)
        if k < config.critic_target_updates_per_env_step:
            critic_losses.append(learner.update_critics(batch, rng))
            learner.soft_update_targets()
        if k < config.actor_updates_per_env_step:
            actor_loss, temperature_loss = learner.update_actor_and_temperature(batch, rng)
            actor_losses.append(actor_loss)
            temperature_losses.append(temperature_loss)
    learner.updates += 1

    record = LossRecord(
        critic_loss=float(np.mean(critic_losses)) if critic_losses else 0.0,
        actor_loss=float(np.mean(actor_losses)) if actor_losses else 0.0,
        temperature_loss=float(np.mean(temperature_losses)) if temperature_losses else 0.0,
        temperature=learner.temperature,
    )
    if not record.is_finite() or not learner.parameters_finite():
        raise TrainingDivergedError(f"Non-finite learner state after update {learner.updates}",
                                    diagnostics=asdict(record))
    if learner.updates % 1000 == 0:
        logger.debug(f"Update {learner.updates}: critic {record.critic_loss:.4f}, actor {record.actor_loss:.4f}, "
                     f"temperature {record.temperature:.4f}")
    return record


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_policy(path: Union[str, Path], policy: SquashedGaussianPolicy) -> Path:
    """
    Write the actor as magic, int64 layer-count and sizes, float64 log-std bounds, then every
    layer's row-major weights followed by its biases, all little-endian
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sizes = policy.params.sizes
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.asarray([len(sizes), *sizes], dtype='<i8').tobytes())
        f.write(np.asarray(policy.log_std_bounds, dtype='<f8').tobytes())
        for array in policy.params.arrays():
            f.write(np.ascontiguousarray(array, dtype='<f8').tobytes())
    logger.info(f"Saved policy checkpoint to {path}")
    return path


def load_policy(path: Union[str, Path]) -> SquashedGaussianPolicy:
    """
    Read a checkpoint written by save_policy

    Raises:
        CheckpointFormatError: If the file is truncated, has trailing bytes or a bad header
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointFormatError(f"Cannot read checkpoint {path}", original_error=e)
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointFormatError(f"{path} is not a policy checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    try:
        n_sizes = int(np.frombuffer(data, dtype='<i8', count=1, offset=offset)[0])
        offset += 8
        if not 2 <= n_sizes <= 64:
            raise CheckpointFormatError(f"Implausible layer count {n_sizes} in {path}")
        sizes = tuple(int(s) for s in np.frombuffer(data, dtype='<i8', count=n_sizes, offset=offset))
        offset += 8 * n_sizes
        bounds = tuple(float(v) for v in np.frombuffer(data, dtype='<f8', count=2, offset=offset))
        offset += 16
        if min(sizes) < 1:
            raise CheckpointFormatError(f"Invalid layer sizes {sizes} in {path}")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(data, dtype='<f8', count=fan_in * fan_out, offset=offset)
            offset += 8 * w.size
            b = np.frombuffer(data, dtype='<f8', count=fan_out, offset=offset)
            offset += 8 * b.size
            weights.append(w.astype(np.float64).reshape(fan_out, fan_in))
            biases.append(b.astype(np.float64))
    except ValueError as e:
        raise CheckpointFormatError(f"Truncated checkpoint {path}", original_error=e)
    if offset != len(data):
        raise CheckpointFormatError(f"{len(data) - offset} trailing bytes in {path}")
    try:
        return SquashedGaussianPolicy(MlpParams(sizes, weights, biases), bounds)
    except ContractViolationError as e:
        raise CheckpointFormatError(f"Inconsistent checkpoint {path}: {e}", original_error=e)
