"""
RunSettings: la configuración plana de un experimento (settings.json).

La validación usa un ``serializers.Serializer`` de Django REST Framework; los
valores por defecto salen de EnvConfig y AgentConfig.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from rest_framework import serializers

from .agent import AgentConfig
from .env import (
    ANCHOR_ACTION,
    ActionBounds,
    EnvConfig,
    HestonParams,
    IntensityParams,
    log_moneyness_grid,
)
from .exceptions import ConfigError
from .noarb import PenaltyConfig
from .risk import CvarConfig
from .surface import SurfaceCaps

_ENV = EnvConfig()
_AGENT = AgentConfig()


@dataclass(frozen=True, slots=True)
class RunSettings:
    seed: int = 0
    out_dir: str | None = None
    # Mercado y malla
    spot0: float = _ENV.spot0
    maturities: tuple[float, ...] = _ENV.maturities
    k_min: float = _ENV.k_grid[0]
    k_max: float = _ENV.k_grid[-1]
    k_points: int = len(_ENV.k_grid)
    steps_per_episode: int = _ENV.steps_per_episode
    dt: float = _ENV.dt
    heston_mu: float = _ENV.heston.mu
    heston_kappa: float = _ENV.heston.kappa
    heston_v_bar: float = _ENV.heston.v_bar
    heston_xi: float = _ENV.heston.xi
    heston_rho_sv: float = _ENV.heston.rho_sv
    heston_v0: float = _ENV.heston.v0
    # Ejecución
    lambda0: float = _ENV.intensity.lambda0
    beta: float = _ENV.intensity.beta
    kappa_k: float = _ENV.intensity.kappa_k
    s0: float = _ENV.intensity.s0
    # Recompensa
    lambda_shape_max: float = _ENV.lambda_shape_max
    lambda_arb_max: float = _ENV.lambda_arb_max
    lambda_cvar: float = _ENV.lambda_cvar
    alpha_max: float = _ENV.bounds.alpha_max
    rho_max_shift: float = _ENV.bounds.rho_max_shift
    psi_scale_min: float = _ENV.bounds.psi_scale_min
    psi_scale_max: float = _ENV.bounds.psi_scale_max
    filter_rate: float = _ENV.filter_rate
    penalty_strikes: int = _ENV.penalty_strikes
    eps_psi: float = _ENV.caps.eps_psi
    tau_max: float = _ENV.caps.tau_max
    sigma_min: float = _ENV.caps.sigma_min
    t_min: float = _ENV.caps.t_min
    tau_arb: float = _ENV.penalty.tau_arb
    eps_norm: float = _ENV.penalty.eps_norm
    arb_floor_correction: bool = _ENV.penalty.floor_correction
    tail_fraction: float = _ENV.cvar.tail_fraction
    tau_cvar: float = _ENV.cvar.tau_cvar
    n_scenarios: int = _ENV.cvar.n_scenarios
    n_scenarios_start: int | None = _AGENT.n_scenarios_start
    price_noise_std: float | None = _ENV.price_noise_std
    # Agente
    episodes: int = _AGENT.episodes
    hidden_size: int = _AGENT.hidden_size
    logstd_min: float = _AGENT.logstd_min
    logstd_max: float = _AGENT.logstd_max
    lr: float = _AGENT.lr
    adam_beta1: float = _AGENT.adam_beta1
    adam_beta2: float = _AGENT.adam_beta2
    adam_eps: float = _AGENT.adam_eps
    clip_eps: float = _AGENT.clip_eps
    gamma: float = _AGENT.gamma
    gae_lambda: float = _AGENT.gae_lambda
    value_coef: float = _AGENT.value_coef
    entropy_coef: float = _AGENT.entropy_coef
    epochs: int = _AGENT.epochs
    minibatch_size: int = _AGENT.minibatch_size
    max_grad_norm: float = _AGENT.max_grad_norm
    value_target_clip: float | None = _AGENT.value_target_clip
    warm_start_steps: int = _AGENT.warm_start_steps
    warm_start_lr: float = _AGENT.warm_start_lr
    warm_start_tol: float = _AGENT.warm_start_tol
    warm_start_action_tol: float = _AGENT.warm_start_action_tol
    # Ablaciones
    use_warm_start: bool = _AGENT.use_warm_start
    use_arb_penalty: bool = _ENV.use_arb_penalty
    use_cvar: bool = _ENV.use_cvar

    def to_dict(self) -> dict:
        data = asdict(self)
        data['maturities'] = list(self.maturities)
        return data

    def to_json(self) -> str:
        """JSON plano con claves ordenadas; la salida es estable byte a byte."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + '\n'

    @classmethod
    def from_dict(cls, data: dict) -> RunSettings:
        data = dict(data)
        if 'maturities' in data:
            data['maturities'] = tuple(float(t) for t in data['maturities'])
        return cls(**data)


def _field_for(name: str, default):
    """Campo DRF según el tipo del valor por defecto."""
    if name == 'maturities':
        return serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=2, default=list(default))
    if name == 'out_dir':
        return serializers.CharField(allow_null=True, allow_blank=False, default=None)
    if name in ('n_scenarios_start',):
        return serializers.IntegerField(allow_null=True, min_value=2, default=None)
    if name in ('price_noise_std', 'value_target_clip'):
        return serializers.FloatField(allow_null=True, min_value=0.0, default=None)
    if isinstance(default, bool):
        return serializers.BooleanField(default=default)
    if isinstance(default, int):
        return serializers.IntegerField(default=default, **INT_RANGES.get(name, {}))
    return serializers.FloatField(default=default, **FLOAT_RANGES.get(name, {}))


INT_RANGES = {
    'seed': {'min_value': 0},
    'k_points': {'min_value': 3},
    'steps_per_episode': {'min_value': 1},
    'penalty_strikes': {'min_value': 3},
    'n_scenarios': {'min_value': 2},
    'episodes': {'min_value': 1},
    'hidden_size': {'min_value': 1},
    'epochs': {'min_value': 1},
    'minibatch_size': {'min_value': 1},
    'warm_start_steps': {'min_value': 0},
}

FLOAT_RANGES = {
    'spot0': {'min_value': 1e-12},
    'dt': {'min_value': 1e-15},
    'heston_kappa': {'min_value': 0.0},
    'heston_v_bar': {'min_value': 0.0},
    'heston_xi': {'min_value': 0.0},
    'heston_rho_sv': {'min_value': -1.0, 'max_value': 1.0},
    'heston_v0': {'min_value': 0.0},
    'lambda0': {'min_value': 0.0},
    'beta': {'min_value': 0.0},
    'kappa_k': {'min_value': 1e-12},
    's0': {'min_value': 0.0},
    'lambda_shape_max': {'min_value': 0.0},
    'lambda_arb_max': {'min_value': 0.0},
    'lambda_cvar': {'min_value': 0.0},
    'alpha_max': {'min_value': 1e-12},
    'rho_max_shift': {'min_value': 1e-12, 'max_value': 1.0},
    'psi_scale_min': {'min_value': 1e-12},
    'filter_rate': {'min_value': 1e-12, 'max_value': 1.0},
    'eps_psi': {'min_value': 1e-300, 'max_value': 1.0},
    'tau_max': {'min_value': 1e-12},
    'sigma_min': {'min_value': 1e-300},
    't_min': {'min_value': 1e-300},
    'tau_arb': {'min_value': 1e-15},
    'eps_norm': {'min_value': 1e-300},
    'tail_fraction': {'min_value': 1e-12, 'max_value': 1.0 - 1e-12},
    'tau_cvar': {'min_value': 1e-15},
    'lr': {'min_value': 0.0},
    'adam_beta1': {'min_value': 0.0, 'max_value': 1.0 - 1e-12},
    'adam_beta2': {'min_value': 0.0, 'max_value': 1.0 - 1e-12},
    'adam_eps': {'min_value': 1e-300},
    'clip_eps': {'min_value': 0.0},
    'gamma': {'min_value': 0.0, 'max_value': 1.0},
    'gae_lambda': {'min_value': 0.0, 'max_value': 1.0},
    'value_coef': {'min_value': 0.0},
    'entropy_coef': {'min_value': 0.0},
    'max_grad_norm': {'min_value': 1e-12},
    'warm_start_lr': {'min_value': 0.0},
    'warm_start_tol': {'min_value': 0.0},
    'warm_start_action_tol': {'min_value': 0.0},
}


class RunSettingsSerializer(serializers.Serializer):
    """Valida un diccionario plano; las claves ausentes toman su valor por defecto."""

    def get_fields(self):
        defaults = RunSettings()
        return {f.name: _field_for(f.name, getattr(defaults, f.name)) for f in fields(RunSettings)}

    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError({'non_field_errors': ['settings debe ser un objeto JSON']})
        unknown = sorted(set(data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: ['Clave desconocida.'] for key in unknown})
        return super().to_internal_value(data)

    def validate_maturities(self, value):
        if any(t <= 0.0 for t in value):
            raise serializers.ValidationError('Los vencimientos deben ser > 0.')
        if any(b <= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError('Los vencimientos deben ser estrictamente crecientes.')
        return value

    def validate(self, attrs):
        errors = {}
        if not attrs['k_min'] < 0.0 < attrs['k_max']:
            errors['k_min'] = ['Se necesita k_min < 0 < k_max.']
        if not attrs['psi_scale_min'] <= ANCHOR_ACTION.psi_scale <= attrs['psi_scale_max']:
            errors['psi_scale_min'] = ['El rango de psi-scale debe contener 1 (acción ancla).']
        if not attrs['psi_scale_min'] < attrs['psi_scale_max']:
            errors['psi_scale_max'] = ['Se necesita psi_scale_min < psi_scale_max.']
        if attrs['alpha_max'] < ANCHOR_ACTION.alpha:
            errors['alpha_max'] = [f'alpha_max debe ser >= {ANCHOR_ACTION.alpha} (acción ancla).']
        if not attrs['logstd_min'] < attrs['logstd_max']:
            errors['logstd_max'] = ['Se necesita logstd_min < logstd_max.']
        start = attrs.get('n_scenarios_start')
        if start is not None and start > attrs['n_scenarios']:
            errors['n_scenarios_start'] = ['n_scenarios_start no puede superar n_scenarios.']
        if errors:
            raise serializers.ValidationError(errors)
        return attrs

    def create(self, validated_data):
        return RunSettings.from_dict(validated_data)


# ==========================
# Carga con errores numerados por línea
# ==========================
def parse_override(text: str):
    """``key=value`` con el valor como literal JSON, o texto si no lo es."""
    key, sep, raw = text.partition('=')
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f'--set {text}: se esperaba key=value')
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _line_of(source: str, key: str) -> int | None:
    match = re.search(r'"%s"\s*:' % re.escape(key), source)
    return source.count('\n', 0, match.start()) + 1 if match else None


def _format_errors(errors: dict, path: str | None, source: str, overridden: set) -> str:
    lines = []
    for key, messages in errors.items():
        text = '; '.join(str(m) for m in (messages if isinstance(messages, list) else [messages]))
        if key in overridden:
            lines.append(f'--set {key}: {text}')
            continue
        line = _line_of(source, key) if path else None
        where = f'{path}:{line}' if line else (path or '<defaults>')
        lines.append(f'{where}: {key}: {text}')
    return '\n'.join(lines)


def validate_settings(data: dict, path: str | None = None, source: str = '', overridden=()) -> RunSettings:
    serializer = RunSettingsSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(_format_errors(serializer.errors, path, source, set(overridden)), serializer.errors)
    return serializer.save()


def load_settings(path=None, overrides=()) -> RunSettings:
    """Lee settings.json (opcional), aplica los --set y valida todo junto."""
    data, source, label = {}, '', None
    if path is not None:
        label = str(path)
        try:
            source = Path(path).read_text(encoding='utf-8')
        except OSError as exc:
            raise ConfigError(f'{label}: no se pudo leer ({exc.strerror or exc})') from exc
        try:
            data = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f'{label}:{exc.lineno}:{exc.colno}: JSON inválido: {exc.msg}') from exc
        if not isinstance(data, dict):
            raise ConfigError(f'{label}:1: settings debe ser un objeto JSON')

    overridden = []
    for item in overrides:
        key, value = parse_override(item)
        data[key] = value
        overridden.append(key)
    return validate_settings(data, label, source, overridden)


# ==========================
# Configuraciones de la librería
# ==========================
def build_env_config(s: RunSettings) -> EnvConfig:
    return EnvConfig(
        maturities=s.maturities,
        k_grid=log_moneyness_grid(s.k_min, s.k_max, s.k_points),
        steps_per_episode=s.steps_per_episode,
        dt=s.dt,
        spot0=s.spot0,
        heston=HestonParams(
            mu=s.heston_mu, kappa=s.heston_kappa, v_bar=s.heston_v_bar,
            xi=s.heston_xi, rho_sv=s.heston_rho_sv, v0=s.heston_v0,
        ),
        intensity=IntensityParams(lambda0=s.lambda0, beta=s.beta, kappa_k=s.kappa_k, s0=s.s0),
        bounds=ActionBounds(
            alpha_max=s.alpha_max, psi_scale_min=s.psi_scale_min,
            psi_scale_max=s.psi_scale_max, rho_max_shift=s.rho_max_shift,
        ),
        lambda_shape_max=s.lambda_shape_max,
        lambda_arb_max=s.lambda_arb_max,
        lambda_cvar=s.lambda_cvar,
        filter_rate=s.filter_rate,
        penalty_strikes=s.penalty_strikes,
        caps=SurfaceCaps(eps_psi=s.eps_psi, tau_max=s.tau_max, sigma_min=s.sigma_min, t_min=s.t_min),
        penalty=PenaltyConfig(tau_arb=s.tau_arb, eps_norm=s.eps_norm, floor_correction=s.arb_floor_correction),
        cvar=CvarConfig(tail_fraction=s.tail_fraction, tau_cvar=s.tau_cvar, n_scenarios=s.n_scenarios),
        price_noise_std=s.price_noise_std,
        use_arb_penalty=s.use_arb_penalty,
        use_cvar=s.use_cvar,
    )


def build_agent_config(s: RunSettings) -> AgentConfig:
    return AgentConfig(
        episodes=s.episodes,
        hidden_size=s.hidden_size,
        logstd_min=s.logstd_min,
        logstd_max=s.logstd_max,
        lr=s.lr,
        adam_beta1=s.adam_beta1,
        adam_beta2=s.adam_beta2,
        adam_eps=s.adam_eps,
        clip_eps=s.clip_eps,
        gamma=s.gamma,
        gae_lambda=s.gae_lambda,
        value_coef=s.value_coef,
        entropy_coef=s.entropy_coef,
        epochs=s.epochs,
        minibatch_size=s.minibatch_size,
        max_grad_norm=s.max_grad_norm,
        value_target_clip=s.value_target_clip,
        warm_start_steps=s.warm_start_steps,
        warm_start_lr=s.warm_start_lr,
        warm_start_tol=s.warm_start_tol,
        warm_start_action_tol=s.warm_start_action_tol,
        use_warm_start=s.use_warm_start,
        n_scenarios_start=s.n_scenarios_start,
    )
