"""
Entorno de market making sobre la superficie eSSVI.

Paso s_t, a_t -> s_{t+1}, r_t:
  1. Deformar la superficie estimada con (psi-scale, rho-shift) y cotizar mid/ask/bid.
  2. Intensidades de ejecución contra el precio justo latente C*.
  3. P&L de cotización y delta neta con fills esperados.
  4. Paso Heston del subyacente y P&L de cobertura.
  5. Penalizaciones BF/CAL/shape, CVaR sobre escenarios, recompensa.
  6. Filtro de la superficie estimada hacia la latente.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .exceptions import EpisodeDoneError
from .noarb import PenaltyConfig, PriceLattice, bf_penalty, cal_penalty, shape_penalty
from .pricing import BsQuoteInputs, bs_call, bs_greeks
from .risk import CvarConfig, cvar_smoothed, sample_scenarios
from .surface import (
    EssviSlice,
    EssviSurface,
    RawEssviSlice,
    SurfaceCaps,
    apply_wing_cap,
    deform,
    psi_max,
    reparam,
    surface_implied_vols,
    to_raw,
)

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
DEFAULT_MATURITIES = tuple(days / TRADING_DAYS for days in (7, 14, 21, 30, 60, 90))


def log_moneyness_grid(k_min: float, k_max: float, k_points: int) -> tuple[float, ...]:
    """Malla equiespaciada en k; redondeada para que el punto central sea 0 exacto."""
    return tuple(round(float(k), 12) + 0.0 for k in np.linspace(k_min, k_max, k_points))


DEFAULT_K_GRID = log_moneyness_grid(-0.35, 0.35, 21)
DEFAULT_STEPS = 780

# Ventana de retornos guardada en el estado (volatilidad realizada)
RETURN_WINDOW = 20
N_RECENT_RETURNS = 5
ACTION_DIM = 5
# retornos recientes, vol realizada y t/steps, medias de theta/rho/psi, acción previa
FEATURE_DIM = N_RECENT_RETURNS + 2 + 3 + ACTION_DIM


@dataclass(frozen=True, slots=True)
class Action:
    alpha: float
    hedge: float
    psi_scale: float
    rho_shift: float
    dual: float

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.hedge, self.psi_scale, self.rho_shift, self.dual])

    @classmethod
    def from_array(cls, values) -> Action:
        values = [float(v) for v in np.asarray(values, dtype=float).reshape(-1)]
        if len(values) != ACTION_DIM:
            raise ValueError(f'Una acción tiene {ACTION_DIM} componentes, recibidas {len(values)}')
        return cls(*values)


# Acción ancla del warm-start
ANCHOR_ACTION = Action(alpha=0.01, hedge=0.5, psi_scale=1.0, rho_shift=0.0, dual=0.0)


@dataclass(frozen=True, slots=True)
class ActionBounds:
    alpha_max: float = 0.05
    psi_scale_min: float = 0.5
    psi_scale_max: float = 1.5
    rho_max_shift: float = 0.2

    def __post_init__(self):
        if not self.alpha_max > 0.0:
            raise ValueError('alpha_max debe ser > 0')
        if not 0.0 < self.psi_scale_min < self.psi_scale_max:
            raise ValueError('Se necesita 0 < psi_scale_min < psi_scale_max')
        if not self.rho_max_shift > 0.0:
            raise ValueError('rho_max_shift debe ser > 0')

    def contains(self, action: Action) -> bool:
        return (
            0.0 <= action.alpha <= self.alpha_max
            and 0.0 <= action.hedge <= 1.0
            and self.psi_scale_min <= action.psi_scale <= self.psi_scale_max
            and -self.rho_max_shift <= action.rho_shift <= self.rho_max_shift
            and action.dual >= 0.0
        )

    def clip(self, action: Action) -> Action:
        return Action(
            alpha=min(max(action.alpha, 0.0), self.alpha_max),
            hedge=min(max(action.hedge, 0.0), 1.0),
            psi_scale=min(max(action.psi_scale, self.psi_scale_min), self.psi_scale_max),
            rho_shift=min(max(action.rho_shift, -self.rho_max_shift), self.rho_max_shift),
            dual=max(action.dual, 0.0),
        )


@dataclass(frozen=True, slots=True)
class HestonParams:
    mu: float = 0.0
    kappa: float = 3.0
    v_bar: float = 0.04
    xi: float = 0.5
    rho_sv: float = -0.5
    v0: float = 0.04

    def __post_init__(self):
        if not -1.0 <= self.rho_sv <= 1.0:
            raise ValueError(f'rho_sv fuera de [-1, 1]: {self.rho_sv!r}')
        if self.v0 < 0.0 or self.v_bar < 0.0 or self.xi < 0.0 or self.kappa < 0.0:
            raise ValueError('kappa, v_bar, xi y v0 deben ser >= 0')


@dataclass(frozen=True, slots=True)
class IntensityParams:
    lambda0: float = 0.8
    beta: float = 35.0
    kappa_k: float = 0.25
    s0: float = 0.1


@dataclass(frozen=True, slots=True)
class PenaltyWeights:
    lambda_shape: float
    lambda_arb: float
    lambda_cvar: float


@dataclass(frozen=True, slots=True)
class EnvConfig:
    maturities: tuple[float, ...] = DEFAULT_MATURITIES
    k_grid: tuple[float, ...] = DEFAULT_K_GRID
    steps_per_episode: int = DEFAULT_STEPS
    dt: float = 1.0 / (TRADING_DAYS * DEFAULT_STEPS)
    spot0: float = 100.0
    heston: HestonParams = field(default_factory=HestonParams)
    intensity: IntensityParams = field(default_factory=IntensityParams)
    bounds: ActionBounds = field(default_factory=ActionBounds)
    lambda_shape_max: float = 0.5
    lambda_arb_max: float = 0.05
    lambda_cvar: float = 0.01
    filter_rate: float = 0.1
    # Número de strikes J de la malla de penalización
    penalty_strikes: int = 21
    caps: SurfaceCaps = field(default_factory=SurfaceCaps)
    penalty: PenaltyConfig = field(default_factory=lambda: PenaltyConfig(floor_correction=True))
    cvar: CvarConfig = field(default_factory=CvarConfig)
    # None: 0.5 * S * sigma_ATM * sqrt(dt)
    price_noise_std: float | None = None
    use_arb_penalty: bool = True
    use_cvar: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'maturities', tuple(float(t) for t in self.maturities))
        object.__setattr__(self, 'k_grid', tuple(float(k) for k in self.k_grid))
        for name in ('maturities', 'k_grid'):
            grid = getattr(self, name)
            if len(grid) < 2 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f'{name} debe tener >= 2 puntos estrictamente crecientes')
        if self.maturities[0] <= 0.0:
            raise ValueError('Los vencimientos deben ser > 0')
        if self.steps_per_episode < 1 or not self.dt > 0.0 or not self.spot0 > 0.0:
            raise ValueError('steps_per_episode >= 1, dt > 0 y spot0 > 0')
        if not 0.0 < self.filter_rate <= 1.0:
            raise ValueError(f'filter_rate debe estar en (0, 1], recibido {self.filter_rate!r}')
        if self.penalty_strikes < 3:
            raise ValueError('penalty_strikes debe ser >= 3')

    @property
    def k_array(self) -> np.ndarray:
        return np.asarray(self.k_grid)

    @property
    def maturity_array(self) -> np.ndarray:
        return np.asarray(self.maturities)


@dataclass(frozen=True, slots=True)
class MarketState:
    t: int
    spot: float
    var: float
    latent: EssviSurface
    estimate: EssviSurface
    prev_action: Action
    log_returns: tuple[float, ...] = ()


@dataclass(frozen=True, slots=True)
class RewardBreakdown:
    pnl_quote: float
    pnl_hedge: float
    bf: float
    cal: float
    shape: float
    cvar_est: float
    lambda_shape: float
    lambda_arb: float
    lambda_eff: float
    lambda_cvar: float
    reward: float


class QuoteGrid(NamedTuple):
    mid: np.ndarray
    ask: np.ndarray
    bid: np.ndarray
    vol: np.ndarray
    half_spread: np.ndarray
    strikes: np.ndarray
    surface: EssviSurface


def latent_surface(cfg: EnvConfig) -> EssviSurface:
    """theta_m = v0*T_m*(1 + 0.1*T_m/T_M), rho = -0.4, psi = 0.3*psi_max(rho)."""
    T = cfg.maturity_array
    thetas = cfg.heston.v0 * T * (1.0 + 0.1 * T / T[-1])
    rho = -0.4
    psi = 0.3 * float(psi_max(rho, cfg.caps))
    slices = [apply_wing_cap(EssviSlice(theta=float(th), rho=rho, psi=psi), cfg.caps) for th in thetas]
    return EssviSurface(maturities=cfg.maturities, slices=tuple(slices))


def reset(cfg: EnvConfig, rng=None) -> MarketState:
    """Estado inicial; no consume números aleatorios."""
    latent = latent_surface(cfg)
    return MarketState(
        t=0,
        spot=cfg.spot0,
        var=cfg.heston.v0,
        latent=latent,
        estimate=latent,
        prev_action=ANCHOR_ACTION,
    )


def heston_step(spot, var, cfg: EnvConfig, rng):
    """Euler con truncamiento completo; acepta escalares o arrays."""
    p = cfg.heston
    spot = np.asarray(spot, dtype=float)
    var = np.asarray(var, dtype=float)
    shocks = rng.standard_normal(size=(2,) + np.broadcast(spot, var).shape)
    z_v = shocks[0]
    z_s = p.rho_sv * shocks[0] + math.sqrt(1.0 - p.rho_sv * p.rho_sv) * shocks[1]

    v_pos = np.maximum(var, 0.0)
    diffusion = np.sqrt(v_pos * cfg.dt)
    var_next = np.maximum(var + p.kappa * (p.v_bar - v_pos) * cfg.dt + p.xi * diffusion * z_v, 0.0)
    spot_next = spot * np.exp((p.mu - 0.5 * v_pos) * cfg.dt + diffusion * z_s)
    if spot_next.ndim == 0:
        return float(spot_next), float(var_next)
    return spot_next, var_next


def _grid_prices(surface: EssviSurface, spot: float, cfg: EnvConfig):
    """Precios BS sobre la malla k (misma fila de strikes para cada vencimiento)."""
    strikes = spot * np.exp(cfg.k_array)
    vol = surface_implied_vols(surface, cfg.k_array, cfg.caps)
    T = np.maximum(cfg.maturity_array, cfg.caps.t_min)[:, None]
    inputs = BsQuoteInputs(spot=spot, strike=strikes[None, :], maturity=T, vol=vol)
    return bs_call(inputs), vol, strikes, inputs


def quote_grid(state: MarketState, action: Action, cfg: EnvConfig) -> QuoteGrid:
    surface = deform(state.estimate, action.psi_scale, action.rho_shift, cfg.caps)
    mid, vol, strikes, inputs = _grid_prices(surface, state.spot, cfg)
    half = action.alpha * state.spot * vol * np.sqrt(inputs.maturity) * cfg.intensity.s0
    return QuoteGrid(
        mid=mid,
        ask=mid + half,
        bid=np.maximum(mid - half, 0.0),
        vol=vol,
        half_spread=half,
        strikes=strikes,
        surface=surface,
    )


def true_prices(state: MarketState, cfg: EnvConfig) -> np.ndarray:
    """Precio justo C* de la superficie latente sobre la misma malla."""
    return _grid_prices(state.latent, state.spot, cfg)[0]


def moneyness_weight(k_grid, cfg: EnvConfig) -> np.ndarray:
    return np.exp(-np.abs(np.asarray(k_grid, dtype=float)) / cfg.intensity.kappa_k)


def intensities(ask, bid, true_prices, k_grid, cfg: EnvConfig):
    """lambda_buy = lambda0*w(k)*(1 - logistic(beta*(ask - C*))), lambda_sell simétrica."""
    p = cfg.intensity
    weight = p.lambda0 * moneyness_weight(k_grid, cfg)
    lam_buy = weight * expit(-p.beta * (np.asarray(ask) - true_prices))
    lam_sell = weight * expit(-p.beta * (true_prices - np.asarray(bid)))
    return lam_buy, lam_sell


def expected_pnl_and_delta(lam_buy, lam_sell, ask, bid, true_prices, greeks_delta):
    arrays = [np.asarray(a, dtype=float) for a in (lam_buy, lam_sell, ask, bid, true_prices, greeks_delta)]
    if len({a.shape for a in arrays}) != 1:
        raise ValueError(f'Formas incompatibles: {[a.shape for a in arrays]}')
    lam_buy, lam_sell, ask, bid, true_prices, greeks_delta = arrays
    pnl_quote = np.sum(lam_buy * (ask - true_prices)) + np.sum(lam_sell * (true_prices - bid))
    net_delta = np.sum((lam_sell - lam_buy) * greeks_delta)
    return float(pnl_quote), float(net_delta)


def hedge_pnl(hedge: float, net_delta: float, spot_move: float) -> float:
    return hedge * net_delta * spot_move


def filter_update(estimate: EssviSurface, latent: EssviSurface, rate: float, caps: SurfaceCaps | None = None) -> EssviSurface:
    """Relajación de cada parámetro crudo una fracción ``rate`` hacia la latente."""
    caps = caps or SurfaceCaps()
    if not 0.0 < rate <= 1.0:
        raise ValueError(f'rate debe estar en (0, 1], recibido {rate!r}')
    if rate == 1.0 or estimate == latent:
        return latent

    slices = []
    for est, lat in zip(estimate.slices, latent.slices):
        if est == lat:
            slices.append(lat)
            continue
        a, b = to_raw(est, caps), to_raw(lat, caps)
        raw = RawEssviSlice(
            log_theta=a.log_theta + rate * (b.log_theta - a.log_theta),
            rho_raw=a.rho_raw + rate * (b.rho_raw - a.rho_raw),
            psi_raw=a.psi_raw + rate * (b.psi_raw - a.psi_raw),
        )
        slices.append(reparam(raw, caps))
    return EssviSurface(maturities=estimate.maturities, slices=tuple(slices))


def penalty_lattice(surface: EssviSurface, spot: float, cfg: EnvConfig) -> PriceLattice:
    """Malla K equiespaciada en [S*e^kmin, S*e^kmax] con J strikes, reconstruida en cada paso."""
    strikes = np.linspace(spot * math.exp(cfg.k_grid[0]), spot * math.exp(cfg.k_grid[-1]), cfg.penalty_strikes)
    k = np.log(strikes / spot)
    vol = surface_implied_vols(surface, k, cfg.caps)
    T = np.maximum(cfg.maturity_array, cfg.caps.t_min)[:, None]
    prices = bs_call(BsQuoteInputs(spot=spot, strike=strikes[None, :], maturity=T, vol=vol))
    return PriceLattice(strikes=strikes, maturities=cfg.maturity_array, prices=prices)


def surface_penalties(surface: EssviSurface, spot: float, cfg: EnvConfig):
    lattice = penalty_lattice(surface, spot, cfg)
    bf, _ = bf_penalty(lattice, cfg.penalty)
    cal, _ = cal_penalty(lattice, cfg.penalty)
    return bf, cal, shape_penalty(surface)


def penalties(state: MarketState, action: Action, cfg: EnvConfig):
    """(BF, CAL, shape) de la superficie cotizada con ``action``."""
    surface = deform(state.estimate, action.psi_scale, action.rho_shift, cfg.caps)
    return surface_penalties(surface, state.spot, cfg)


def price_noise_std(state: MarketState, cfg: EnvConfig) -> float:
    if cfg.price_noise_std is not None:
        return cfg.price_noise_std
    first = state.estimate.slices[0]
    sigma_atm = math.sqrt(first.theta / max(state.estimate.maturities[0], cfg.caps.t_min))
    return 0.5 * state.spot * sigma_atm * math.sqrt(cfg.dt)


def features(state: MarketState, cfg: EnvConfig) -> np.ndarray:
    """
    FEATURE_DIM entradas: 5 log-retornos normalizados, vol realizada (20 pasos, anualizada),
    t/steps, medias de theta/rho/psi de la estimación y la acción previa.
    """
    returns = np.asarray(state.log_returns[-RETURN_WINDOW:], dtype=float)
    scale = math.sqrt(max(cfg.heston.v_bar, 1e-12) * cfg.dt)
    recent = np.zeros(N_RECENT_RETURNS)
    tail = returns[-N_RECENT_RETURNS:]
    if tail.size:
        recent[-tail.size:] = tail / scale
    realized = math.sqrt(np.mean(returns * returns) / cfg.dt) if returns.size else 0.0
    vector = np.concatenate([
        recent,
        [realized, state.t / cfg.steps_per_episode],
        [state.estimate.thetas.mean(), state.estimate.rhos.mean(), state.estimate.psis.mean()],
        state.prev_action.as_array(),
    ])
    return np.nan_to_num(vector, nan=0.0, posinf=0.0, neginf=0.0)


def default_weights(cfg: EnvConfig) -> PenaltyWeights:
    return PenaltyWeights(cfg.lambda_shape_max, cfg.lambda_arb_max, cfg.lambda_cvar)


def step(state: MarketState, action: Action, cfg: EnvConfig, rng, weights: PenaltyWeights | None = None):
    """Un paso del entorno. Devuelve (estado siguiente, recompensa, desglose, features)."""
    if state.t >= cfg.steps_per_episode:
        raise EpisodeDoneError(f'Episodio terminado en t={state.t}')
    action = cfg.bounds.clip(action)
    weights = weights or default_weights(cfg)

    quotes = quote_grid(state, action, cfg)
    c_star = true_prices(state, cfg)
    lam_buy, lam_sell = intensities(quotes.ask, quotes.bid, c_star, cfg.k_grid, cfg)
    deltas = bs_greeks(
        BsQuoteInputs(
            spot=state.spot,
            strike=quotes.strikes[None, :],
            maturity=np.maximum(cfg.maturity_array, cfg.caps.t_min)[:, None],
            vol=quotes.vol,
        )
    ).delta
    pnl_quote, net_delta = expected_pnl_and_delta(lam_buy, lam_sell, quotes.ask, quotes.bid, c_star, deltas)

    spot_next, var_next = heston_step(state.spot, state.var, cfg, rng)
    spot_move = spot_next - state.spot
    pnl_hedge = hedge_pnl(action.hedge, net_delta, spot_move)

    bf, cal, shape = surface_penalties(quotes.surface, state.spot, cfg)

    cvar_est = 0.0
    if cfg.use_cvar:
        cvar_cfg = replace(cfg.cvar, price_noise_std=price_noise_std(state, cfg))
        batch = sample_scenarios(
            np.concatenate([lam_buy.ravel(), lam_sell.ravel()]),
            np.concatenate([(quotes.ask - c_star).ravel(), (c_star - quotes.bid).ravel()]),
            action.hedge * net_delta,
            spot_move,
            cvar_cfg,
            rng,
        )
        cvar_est = cvar_smoothed(batch, cvar_cfg)

    lambda_arb = weights.lambda_arb if cfg.use_arb_penalty else 0.0
    lambda_eff = lambda_arb + action.dual if cfg.use_arb_penalty else 0.0
    reward = (
        pnl_quote
        + pnl_hedge
        - weights.lambda_shape * shape
        - lambda_eff * (bf + cal)
        - weights.lambda_cvar * cvar_est
    )
    breakdown = RewardBreakdown(
        pnl_quote=pnl_quote,
        pnl_hedge=pnl_hedge,
        bf=bf,
        cal=cal,
        shape=shape,
        cvar_est=cvar_est,
        lambda_shape=weights.lambda_shape,
        lambda_arb=lambda_arb,
        lambda_eff=lambda_eff,
        lambda_cvar=weights.lambda_cvar,
        reward=reward,
    )

    next_state = MarketState(
        t=state.t + 1,
        spot=spot_next,
        var=var_next,
        latent=state.latent,
        estimate=filter_update(state.estimate, state.latent, cfg.filter_rate, cfg.caps),
        prev_action=action,
        log_returns=(state.log_returns + (math.log(spot_next / state.spot),))[-RETURN_WINDOW:],
    )
    return next_state, reward, breakdown, features(next_state, cfg)


class MarketMakingEnv:
    """Un entorno con su propio generador; un solo hilo."""

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.state: MarketState | None = None

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.t >= self.cfg.steps_per_episode

    def reset(self) -> np.ndarray:
        self.state = reset(self.cfg, self.rng)
        return features(self.state, self.cfg)

    def step(self, action: Action, weights: PenaltyWeights | None = None):
        if self.state is None:
            self.reset()
        self.state, reward, breakdown, obs = step(self.state, action, self.cfg, self.rng, weights)
        return obs, reward, breakdown, self.done
