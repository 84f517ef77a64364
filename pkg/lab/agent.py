"""
Agente: actor gaussiano + crítico con backprop escrito a mano (numpy).

- Redes tanh entrada -> 64 -> 64 -> salida.
- Squash de la salida cruda z a la acción física.
- Warm-start por regresión hacia la acción ancla.
- GAE + PPO con clipping, bonus de entropía y clip global de gradiente.
- Recocido lineal de pesos estructurales y el bucle completo de entrenamiento.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .env import (
    ACTION_DIM,
    ANCHOR_ACTION,
    FEATURE_DIM,
    Action,
    ActionBounds,
    EnvConfig,
    MarketMakingEnv,
    PenaltyWeights,
    features,
    penalties,
    reset,
    step,
)
from .exceptions import NonFiniteGradientError, ShapeMismatchError
from .risk import ScenarioBatch, empirical_cvar_exact, empirical_var

logger = logging.getLogger(__name__)

LOGSTD_MIN = math.log(1e-3)
LOGSTD_MAX = math.log(0.5)
LOGSTD_INIT = math.log(0.3)
LOG_2PI = math.log(2.0 * math.pi)
# Cada cuántos pasos el warm-start evalúa el criterio de parada
WARM_START_CHECK_EVERY = 25
# Fracción de cola para los marcadores var5/cvar5
TAIL_FRACTION_LOG = 0.05


# ==========================
# Red y backprop
# ==========================
@dataclass(slots=True)
class MlpParams:
    """Pesos (salida x entrada) y sesgos por capa; tanh en todas menos la última."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatchError('Se necesita al menos una capa y un sesgo por capa')
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeMismatchError(f'Capa {i}: W {W.shape} y b {b.shape} incompatibles')
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeMismatchError(f'Capa {i}: entrada {W.shape[1]} != salida previa')

    @classmethod
    def init(cls, sizes, rng, out_scale: float = 1.0, out_bias: float = 0.0) -> MlpParams:
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = 1.0 / math.sqrt(n_in)
            if i == len(sizes) - 2:
                scale *= out_scale
            weights.append(rng.normal(0.0, scale, size=(n_out, n_in)))
            biases.append(np.full(n_out, out_bias if i == len(sizes) - 2 else 0.0))
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> MlpParams:
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> MlpParams:
        return MlpParams([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])


@dataclass(slots=True)
class MlpCache:
    # activations[0] es la entrada; activations[i] la salida tanh de la capa i-1
    activations: list[np.ndarray]
    squeeze: bool


def mlp_forward(p: MlpParams, x):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[-1] != p.in_dim:
        raise ShapeMismatchError(f'La red espera {p.in_dim} entradas, recibió {h.shape[-1]}')

    activations = [h]
    last = len(p.weights) - 1
    for i, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ W.T + b
        if i < last:
            h = np.tanh(z)
            activations.append(h)
        else:
            h = z
    y = h[0] if squeeze else h
    return y, MlpCache(activations, squeeze)


def mlp_backward(p: MlpParams, cache: MlpCache, dy):
    """Gradientes exactos de sum(dy * y) respecto a pesos, sesgos y entrada."""
    grad = np.atleast_2d(np.asarray(dy, dtype=float))
    weights, biases = [None] * len(p.weights), [None] * len(p.weights)
    for i in range(len(p.weights) - 1, -1, -1):
        h_in = cache.activations[i]
        weights[i] = grad.T @ h_in
        biases[i] = grad.sum(axis=0)
        dx = grad @ p.weights[i]
        if i > 0:
            grad = dx * (1.0 - h_in * h_in)
    return MlpParams(weights, biases), (dx[0] if cache.squeeze else dx)


# ==========================
# Política
# ==========================
@dataclass(slots=True)
class PolicyParams:
    actor_mean: MlpParams
    actor_logstd: MlpParams
    critic: MlpParams
    logstd_min: float = LOGSTD_MIN
    logstd_max: float = LOGSTD_MAX

    def networks(self) -> tuple[MlpParams, MlpParams, MlpParams]:
        return self.actor_mean, self.actor_logstd, self.critic

    def arrays(self) -> list[np.ndarray]:
        return [a for net in self.networks() for a in net.arrays()]

    def copy(self) -> PolicyParams:
        return replace(
            self,
            actor_mean=self.actor_mean.copy(),
            actor_logstd=self.actor_logstd.copy(),
            critic=self.critic.copy(),
        )

    def zeros_like(self) -> PolicyParams:
        return replace(
            self,
            actor_mean=self.actor_mean.zeros_like(),
            actor_logstd=self.actor_logstd.zeros_like(),
            critic=self.critic.zeros_like(),
        )


def init_policy(rng, feature_dim: int = FEATURE_DIM, hidden_size: int = 64, n_hidden: int = 2,
                logstd_min: float = LOGSTD_MIN, logstd_max: float = LOGSTD_MAX) -> PolicyParams:
    hidden = [hidden_size] * n_hidden
    return PolicyParams(
        actor_mean=MlpParams.init([feature_dim, *hidden, ACTION_DIM], rng, out_scale=0.01),
        actor_logstd=MlpParams.init([feature_dim, *hidden, ACTION_DIM], rng, out_scale=0.0, out_bias=LOGSTD_INIT),
        critic=MlpParams.init([feature_dim, *hidden, 1], rng),
        logstd_min=logstd_min,
        logstd_max=logstd_max,
    )


@dataclass(slots=True)
class PolicyOutput:
    mean: np.ndarray
    logstd: np.ndarray
    value: np.ndarray
    # True donde log-std no está recortado (el gradiente pasa)
    logstd_free: np.ndarray
    caches: tuple[MlpCache, MlpCache, MlpCache]


def policy_forward(policy: PolicyParams, x) -> PolicyOutput:
    X = np.atleast_2d(np.asarray(x, dtype=float))
    mean, c_mean = mlp_forward(policy.actor_mean, X)
    raw_logstd, c_std = mlp_forward(policy.actor_logstd, X)
    value, c_value = mlp_forward(policy.critic, X)
    logstd = np.clip(raw_logstd, policy.logstd_min, policy.logstd_max)
    free = (raw_logstd > policy.logstd_min) & (raw_logstd < policy.logstd_max)
    return PolicyOutput(mean, logstd, value[:, 0], free, (c_mean, c_std, c_value))


def gaussian_log_prob(z, mean, logstd):
    u = (z - mean) * np.exp(-logstd)
    return -0.5 * np.sum(u * u, axis=-1) - np.sum(logstd, axis=-1) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_entropy(logstd):
    return np.sum(0.5 * (LOG_2PI + 1.0) + logstd, axis=-1)


def log_prob_and_entropy(policy: PolicyParams, features, z):
    """Log-densidad de z bajo la normal diagonal y su entropía cerrada."""
    single = np.ndim(z) == 1
    out = policy_forward(policy, features)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    logp = gaussian_log_prob(z, out.mean, out.logstd)
    entropy = gaussian_entropy(out.logstd)
    if single:
        return float(logp[0]), float(entropy[0])
    return logp, entropy


def log_prob_grads(policy: PolicyParams, features, z) -> PolicyParams:
    """Gradiente de sum(log p(z|s)) respecto a los parámetros del actor."""
    out = policy_forward(policy, features)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    inv_std = np.exp(-out.logstd)
    u = (z - out.mean) * inv_std
    d_mean = u * inv_std
    d_logstd = (u * u - 1.0) * out.logstd_free
    grads = policy.zeros_like()
    grads.actor_mean = mlp_backward(policy.actor_mean, out.caches[0], d_mean)[0]
    grads.actor_logstd = mlp_backward(policy.actor_logstd, out.caches[1], d_logstd)[0]
    return grads


# ==========================
# Squash
# ==========================
def squash_array(z, bounds: ActionBounds) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    out[..., 0] = bounds.alpha_max * expit(z[..., 0])
    out[..., 1] = expit(z[..., 1])
    out[..., 2] = bounds.psi_scale_min + (bounds.psi_scale_max - bounds.psi_scale_min) * expit(z[..., 2])
    out[..., 3] = bounds.rho_max_shift * np.tanh(z[..., 3])
    out[..., 4] = np.logaddexp(0.0, z[..., 4])
    return out


def squash_derivative(z, bounds: ActionBounds) -> np.ndarray:
    """Diagonal del jacobiano de squash_array."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    s = expit(z[..., 0])
    out[..., 0] = bounds.alpha_max * s * (1.0 - s)
    s = expit(z[..., 1])
    out[..., 1] = s * (1.0 - s)
    s = expit(z[..., 2])
    out[..., 2] = (bounds.psi_scale_max - bounds.psi_scale_min) * s * (1.0 - s)
    t = np.tanh(z[..., 3])
    out[..., 3] = bounds.rho_max_shift * (1.0 - t * t)
    out[..., 4] = expit(z[..., 4])
    return out


def squash(z, bounds: ActionBounds) -> Action:
    return Action.from_array(squash_array(np.asarray(z, dtype=float).reshape(ACTION_DIM), bounds))


# ==========================
# Optimizador
# ==========================
class Adam:
    """Adam con corrección de sesgo sobre una lista fija de arrays."""

    def __init__(self, params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Descenso: params -= lr * m_hat / (sqrt(v_hat) + eps), en sitio."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_finite(grads) -> None:
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteGradientError('Gradiente no finito; se aborta la actualización')


def clip_grad_norm(grads, max_norm: float) -> float:
    """Escala los gradientes en sitio; devuelve la norma global previa."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# ==========================
# Configuración
# ==========================
@dataclass(frozen=True, slots=True)
class PpoHyper:
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 1e-3
    lr: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    max_grad_norm: float = 1.0
    # None: objetivos del crítico sin recortar
    value_target_clip: float | None = None


@dataclass(frozen=True, slots=True)
class AgentConfig:
    episodes: int = 8
    hidden_size: int = 64
    n_hidden: int = 2
    logstd_min: float = LOGSTD_MIN
    logstd_max: float = LOGSTD_MAX
    lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 1e-3
    epochs: int = 4
    minibatch_size: int = 256
    max_grad_norm: float = 1.0
    value_target_clip: float | None = None
    warm_start_steps: int = 800
    warm_start_lr: float = 1e-2
    warm_start_tol: float = 1e-6
    warm_start_action_tol: float = 0.05
    warm_start_states: int = 256
    use_warm_start: bool = True
    # None: N_MC fijo; si no, rampa lineal desde este valor hasta cvar.n_scenarios
    n_scenarios_start: int | None = None

    def ppo_hyper(self) -> PpoHyper:
        return PpoHyper(
            clip_eps=self.clip_eps,
            value_coef=self.value_coef,
            entropy_coef=self.entropy_coef,
            lr=self.lr,
            epochs=self.epochs,
            minibatch_size=self.minibatch_size,
            max_grad_norm=self.max_grad_norm,
            value_target_clip=self.value_target_clip,
        )


@dataclass(frozen=True, slots=True)
class Schedules:
    """lambda_shape y lambda_arb lineales desde 0; lambda_cvar fijo."""

    lambda_shape_max: float = 0.5
    lambda_arb_max: float = 0.05
    lambda_cvar: float = 0.01
    episode_count: int = 8
    n_scenarios: int = 64
    n_scenarios_start: int | None = None

    @classmethod
    def from_configs(cls, env_cfg: EnvConfig, agent_cfg: AgentConfig) -> Schedules:
        return cls(
            lambda_shape_max=env_cfg.lambda_shape_max,
            lambda_arb_max=env_cfg.lambda_arb_max,
            lambda_cvar=env_cfg.lambda_cvar,
            episode_count=agent_cfg.episodes,
            n_scenarios=env_cfg.cvar.n_scenarios,
            n_scenarios_start=agent_cfg.n_scenarios_start,
        )

    def fraction(self, episode: int) -> float:
        if self.episode_count <= 1:
            return 1.0
        return min(max(episode / (self.episode_count - 1), 0.0), 1.0)

    def lambda_shape(self, episode: int) -> float:
        return self.lambda_shape_max * self.fraction(episode)

    def lambda_arb(self, episode: int) -> float:
        return self.lambda_arb_max * self.fraction(episode)

    def weights(self, episode: int) -> PenaltyWeights:
        return PenaltyWeights(self.lambda_shape(episode), self.lambda_arb(episode), self.lambda_cvar)

    def n_scenarios_at(self, episode: int) -> int:
        if self.n_scenarios_start is None:
            return self.n_scenarios
        start = self.n_scenarios_start
        return int(round(start + (self.n_scenarios - start) * self.fraction(episode)))


# ==========================
# Trayectorias, GAE y PPO
# ==========================
@dataclass(slots=True)
class Trajectory:
    features: np.ndarray
    raw_actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    returns: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return self.rewards.size

    def subset(self, idx) -> Trajectory:
        return Trajectory(
            features=self.features[idx],
            raw_actions=self.raw_actions[idx],
            log_probs=self.log_probs[idx],
            values=self.values[idx],
            rewards=self.rewards[idx],
            advantages=self.advantages[idx],
            returns=self.returns[idx],
        )


def gae(rewards, values, last_value: float, gamma: float, lam: float):
    """delta_t = r_t + gamma*V_{t+1} - V_t; A_t = sum (gamma*lam)^l delta_{t+l}."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError(f'rewards {rewards.shape} y values {values.shape} no coinciden')
    advantages = np.zeros_like(rewards)
    running = 0.0
    next_value = last_value
    for t in range(rewards.size - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages) -> np.ndarray:
    advantages = np.asarray(advantages, dtype=float)
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


def surrogate_objective(policy: PolicyParams, batch: Trajectory, clip_eps: float) -> float:
    """Media de min(r*A, clip(r)*A)."""
    out = policy_forward(policy, batch.features)
    ratio = np.exp(gaussian_log_prob(batch.raw_actions, out.mean, out.logstd) - batch.log_probs)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return float(np.mean(np.minimum(ratio * batch.advantages, clipped * batch.advantages)))


def ppo_loss(policy: PolicyParams, batch: Trajectory, hyper: PpoHyper):
    """
    Pérdida a minimizar: -surrogate + c_v*mean((V - R)^2) - c_H*entropía media.
    Devuelve (pérdida, gradientes con la forma de PolicyParams, métricas).
    """
    n = len(batch)
    out = policy_forward(policy, batch.features)
    inv_std = np.exp(-out.logstd)
    u = (batch.raw_actions - out.mean) * inv_std
    logp = -0.5 * np.sum(u * u, axis=1) - np.sum(out.logstd, axis=1) - 0.5 * ACTION_DIM * LOG_2PI
    ratio = np.exp(logp - batch.log_probs)
    adv = batch.advantages
    clipped = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps)
    surrogate = np.minimum(ratio * adv, clipped * adv)

    targets = batch.returns
    if hyper.value_target_clip is not None:
        targets = np.clip(targets, -hyper.value_target_clip, hyper.value_target_clip)
    value_error = out.value - targets
    entropy = gaussian_entropy(out.logstd)

    loss = -surrogate.mean() + hyper.value_coef * np.mean(value_error ** 2) - hyper.entropy_coef * entropy.mean()

    # d pérdida / d logp: solo la rama sin recortar aporta
    unclipped = ratio * adv <= clipped * adv
    d_logp = -(unclipped * ratio * adv) / n
    d_mean = d_logp[:, None] * u * inv_std
    d_logstd = (d_logp[:, None] * (u * u - 1.0) - hyper.entropy_coef / n) * out.logstd_free
    d_value = (2.0 * hyper.value_coef / n) * value_error[:, None]

    grads = policy.zeros_like()
    grads.actor_mean = mlp_backward(policy.actor_mean, out.caches[0], d_mean)[0]
    grads.actor_logstd = mlp_backward(policy.actor_logstd, out.caches[1], d_logstd)[0]
    grads.critic = mlp_backward(policy.critic, out.caches[2], d_value)[0]
    stats = {
        'policy_loss': float(-surrogate.mean()),
        'value_loss': float(np.mean(value_error ** 2)),
        'entropy': float(entropy.mean()),
        'clip_fraction': float(np.mean(~unclipped)),
    }
    return float(loss), grads, stats


def ppo_update(policy: PolicyParams, batch: Trajectory, hyper: PpoHyper, rng, optimizer: Adam | None = None) -> PolicyParams:
    """K épocas de minibatches con Adam; las ventajas ya vienen normalizadas."""
    policy = policy.copy()
    params = policy.arrays()
    if optimizer is None:
        optimizer = Adam(params, lr=hyper.lr)
    n = len(batch)
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.minibatch_size):
            minibatch = batch.subset(order[start:start + hyper.minibatch_size])
            loss, grads, stats = ppo_loss(policy, minibatch, hyper)
            flat = grads.arrays()
            _check_finite(flat)
            clip_grad_norm(flat, hyper.max_grad_norm)
            optimizer.step(params, flat)
        logger.debug('PPO época %d: pérdida=%.6g clip=%.3f', epoch, loss, stats['clip_fraction'])
    return policy


# ==========================
# Warm-start
# ==========================
@dataclass(frozen=True, slots=True)
class WarmStartReport:
    initial_loss: float
    final_loss: float
    steps_run: int
    arb: float
    action_distance: float


def warm_start_loss(policy: PolicyParams, X, anchor: Action, bounds: ActionBounds):
    """Media de (squash(mu(s)) - a*)^2 y su gradiente en la red de medias."""
    mean, cache = mlp_forward(policy.actor_mean, np.atleast_2d(X))
    diff = squash_array(mean, bounds) - anchor.as_array()
    loss = float(np.mean(diff * diff))
    d_mean = 2.0 * diff * squash_derivative(mean, bounds) / diff.size
    return loss, mlp_backward(policy.actor_mean, cache, d_mean)[0]


def _warm_start_states(cfg: EnvConfig, anchor: Action, n_states: int, rng) -> np.ndarray:
    """Mitad estados de reset, mitad de 2 rollouts cortos con la acción ancla."""
    n_reset = n_states // 2
    pool = [features(reset(cfg), cfg)] * n_reset
    per_rollout = max(1, min((n_states - n_reset + 1) // 2, cfg.steps_per_episode))
    while len(pool) < n_states:
        state = reset(cfg)
        for _ in range(per_rollout):
            state, _, _, obs = step(state, anchor, cfg, rng)
            pool.append(obs)
            if len(pool) >= n_states or state.t >= cfg.steps_per_episode:
                break
    return np.vstack(pool[:n_states])


def _anchor_diagnostics(policy: PolicyParams, X, anchor: Action, cfg: EnvConfig):
    mean, _ = mlp_forward(policy.actor_mean, X)
    actions = squash_array(mean, cfg.bounds)
    distance = float(np.mean(np.linalg.norm(actions - anchor.as_array(), axis=1)))
    state = reset(cfg)
    reset_action = squash(mlp_forward(policy.actor_mean, features(state, cfg))[0], cfg.bounds)
    bf, cal, _ = penalties(state, reset_action, cfg)
    return bf + cal, distance


def warm_start(policy: PolicyParams, env: MarketMakingEnv, anchor: Action, steps: int, rng,
               cfg: AgentConfig | None = None):
    """
    Regresión de squash(mu(s)) hacia la acción ancla con Adam.
    Para cuando BF+CAL del ancla <= tolerancia y la distancia media <= warm_start_action_tol.
    """
    cfg = cfg or AgentConfig()
    policy = policy.copy()
    env_cfg = env.cfg
    if steps <= 0:
        return policy, WarmStartReport(math.nan, math.nan, 0, math.nan, math.nan)

    X = _warm_start_states(env_cfg, anchor, cfg.warm_start_states, rng)
    params = policy.actor_mean.arrays()
    optimizer = Adam(params, lr=cfg.warm_start_lr, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)

    initial_loss, _ = warm_start_loss(policy, X, anchor, env_cfg.bounds)
    steps_run = 0
    for i in range(steps):
        if i % WARM_START_CHECK_EVERY == 0 and i > 0:
            arb, distance = _anchor_diagnostics(policy, X, anchor, env_cfg)
            logger.debug('warm-start paso %d: arb=%.3e distancia=%.4f', i, arb, distance)
            if arb <= cfg.warm_start_tol and distance <= cfg.warm_start_action_tol:
                break
        loss, grads = warm_start_loss(policy, X, anchor, env_cfg.bounds)
        flat = grads.arrays()
        _check_finite(flat)
        optimizer.step(params, flat)
        steps_run += 1

    final_loss, _ = warm_start_loss(policy, X, anchor, env_cfg.bounds)
    arb, distance = _anchor_diagnostics(policy, X, anchor, env_cfg)
    logger.info(
        'Warm-start: %d pasos, pérdida %.4g -> %.4g, BF+CAL=%.3e, distancia=%.4f',
        steps_run, initial_loss, final_loss, arb, distance,
    )
    return policy, WarmStartReport(initial_loss, final_loss, steps_run, arb, distance)


# ==========================
# Entrenamiento
# ==========================
@dataclass(slots=True)
class RunArtifacts:
    run_rows: list[dict]
    step_rows: list[dict]
    warm_start: WarmStartReport | None = None


def rollout(policy: PolicyParams, env: MarketMakingEnv, weights: PenaltyWeights, rng, episode: int):
    """Un episodio completo; devuelve la trayectoria, filas de step_log y act_std por paso."""
    obs = env.reset()
    n = env.cfg.steps_per_episode
    feats = np.zeros((n, obs.size))
    raw = np.zeros((n, ACTION_DIM))
    logps, values, rewards, act_std = (np.zeros(n) for _ in range(4))
    rows = []
    for t in range(n):
        out = policy_forward(policy, obs)
        z = out.mean[0] + np.exp(out.logstd[0]) * rng.standard_normal(ACTION_DIM)
        action = squash(z, env.cfg.bounds)
        spot = env.state.spot
        next_obs, reward, b, _ = env.step(action, weights)

        feats[t], raw[t] = obs, z
        logps[t] = gaussian_log_prob(z[None, :], out.mean, out.logstd)[0]
        values[t], rewards[t] = out.value[0], reward
        act_std[t] = float(np.mean(np.exp(out.logstd[0])))
        rows.append({
            'episode': episode + 1,
            't': t,
            'spot': spot,
            'reward': reward,
            'pnl_quote': b.pnl_quote,
            'pnl_hedge': b.pnl_hedge,
            'bf': b.bf,
            'cal': b.cal,
            'shape': b.shape,
            'cvar': b.cvar_est,
            'alpha': action.alpha,
            'hedge': action.hedge,
            'psi_scale': action.psi_scale,
            'rho_shift': action.rho_shift,
            'dual': action.dual,
            'lambda_shape': b.lambda_shape,
            'lambda_eff': b.lambda_eff,
        })
        obs = next_obs
    trajectory = Trajectory(features=feats, raw_actions=raw, log_probs=logps, values=values, rewards=rewards)
    return trajectory, rows, act_std


def episode_summary(episode: int, rows: list[dict], act_std) -> dict:
    """Fila de run_log; var5/cvar5 en orientación P&L sobre el P&L bruto por paso."""
    col = {key: np.array([r[key] for r in rows], dtype=float) for key in rows[0]}
    pnl_steps = col['pnl_quote'] + col['pnl_hedge']
    structural = col['lambda_shape'] * col['shape'] + col['lambda_eff'] * (col['bf'] + col['cal'])
    batch = ScenarioBatch(pnl=pnl_steps)
    return {
        'episode': episode + 1,
        'reward_sum': float(col['reward'].sum()),
        'pnl_raw': float(pnl_steps.sum()),
        'pnl_adj': float(pnl_steps.sum() - structural.sum()),
        'bf_mean': float(col['bf'].mean()),
        'cal_mean': float(col['cal'].mean()),
        'shape_mean': float(col['shape'].mean()),
        'cvar_mean': float(col['cvar'].mean()),
        'var5_steps': -empirical_var(batch, TAIL_FRACTION_LOG),
        'cvar5_steps': -empirical_cvar_exact(batch, TAIL_FRACTION_LOG),
        'alpha_mean': float(col['alpha'].mean()),
        'hedge_mean': float(col['hedge'].mean()),
        'act_std': float(np.mean(act_std)),
    }


def train(env_cfg: EnvConfig, agent_cfg: AgentConfig, seed: int):
    """Warm-start + PPO con multiplicador dual; determinista para una semilla dada."""
    init_ss, warm_ss, env_ss, ppo_ss = np.random.SeedSequence(seed).spawn(4)
    policy = init_policy(
        np.random.default_rng(init_ss),
        hidden_size=agent_cfg.hidden_size,
        n_hidden=agent_cfg.n_hidden,
        logstd_min=agent_cfg.logstd_min,
        logstd_max=agent_cfg.logstd_max,
    )
    env = MarketMakingEnv(env_cfg, np.random.default_rng(env_ss))
    rng = np.random.default_rng(ppo_ss)

    report = None
    if agent_cfg.use_warm_start:
        policy, report = warm_start(
            policy, env, ANCHOR_ACTION, agent_cfg.warm_start_steps, np.random.default_rng(warm_ss), agent_cfg
        )

    hyper = agent_cfg.ppo_hyper()
    optimizer = Adam(
        policy.arrays(), lr=agent_cfg.lr, betas=(agent_cfg.adam_beta1, agent_cfg.adam_beta2), eps=agent_cfg.adam_eps
    )
    schedules = Schedules.from_configs(env_cfg, agent_cfg)
    run_rows, step_rows = [], []
    for episode in range(agent_cfg.episodes):
        env.cfg = replace(env_cfg, cvar=replace(env_cfg.cvar, n_scenarios=schedules.n_scenarios_at(episode)))
        trajectory, rows, act_std = rollout(policy, env, schedules.weights(episode), rng, episode)
        advantages, returns = gae(trajectory.rewards, trajectory.values, 0.0, agent_cfg.gamma, agent_cfg.gae_lambda)
        trajectory.advantages = normalize_advantages(advantages)
        trajectory.returns = returns
        policy = ppo_update(policy, trajectory, hyper, rng, optimizer)

        summary = episode_summary(episode, rows, act_std)
        run_rows.append(summary)
        step_rows.extend(rows)
        logger.info(
            'Episodio %d/%d: recompensa=%.4f pnl_adj=%.4f bf=%.2e cal=%.2e hedge=%.3f',
            episode + 1, agent_cfg.episodes, summary['reward_sum'], summary['pnl_adj'],
            summary['bf_mean'], summary['cal_mean'], summary['hedge_mean'],
        )
    return policy, RunArtifacts(run_rows=run_rows, step_rows=step_rows, warm_start=report)
