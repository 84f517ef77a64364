"""
CVaR suavizado (Rockafellar-Uryasev) sobre escenarios Monte Carlo de P&L.

Orientación de pérdidas L = -PnL:

    CVaR_alpha(L) = min_eta  eta + (1/alpha) * E[s_tau(L - eta)]

alpha es la fracción de peores resultados (0.05 = peor 5%).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import NoConvergenceError

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 100
DERIVATIVE_TOL = 1e-10
# Holgura del bracket inicial en unidades de tau
BRACKET_WIDTH = 40.0


@dataclass(frozen=True, slots=True)
class CvarConfig:
    tail_fraction: float = 0.05
    tau_cvar: float = 1e-3
    n_scenarios: int = 64
    price_noise_std: float = 0.0
    hard_hinge: bool = False

    def __post_init__(self):
        if not 0.0 < self.tail_fraction < 1.0:
            raise ValueError(f'tail_fraction debe estar en (0, 1), recibido {self.tail_fraction!r}')
        if not self.hard_hinge and not self.tau_cvar > 0.0:
            raise ValueError(f'tau_cvar debe ser > 0, recibido {self.tau_cvar!r}')
        if self.n_scenarios < 2:
            raise ValueError(f'n_scenarios debe ser >= 2, recibido {self.n_scenarios!r}')
        if not self.price_noise_std >= 0.0:
            raise ValueError(f'price_noise_std debe ser >= 0, recibido {self.price_noise_std!r}')


@dataclass(frozen=True, slots=True)
class ScenarioBatch:
    pnl: np.ndarray

    def __post_init__(self):
        pnl = np.asarray(self.pnl, dtype=float).reshape(-1)
        if pnl.size == 0:
            raise ValueError('ScenarioBatch vacío')
        if not np.all(np.isfinite(pnl)):
            raise ValueError('ScenarioBatch con P&L no finito')
        object.__setattr__(self, 'pnl', pnl)

    @property
    def losses(self) -> np.ndarray:
        return -self.pnl

    def __len__(self):
        return self.pnl.size


def sample_scenarios(fills_mean, edges, hedge_term_base, delta_s, cfg: CvarConfig, rng) -> ScenarioBatch:
    """
    Volúmenes Poisson(fills_mean) por bucket y dS ~ Normal(delta_s, std^2).

    P&L por escenario = sum(v * edges) + hedge_term_base * dS.
    """
    fills_mean = np.asarray(fills_mean, dtype=float).reshape(-1)
    edges = np.asarray(edges, dtype=float).reshape(-1)
    if fills_mean.shape != edges.shape:
        raise ValueError(f'fills_mean {fills_mean.shape} y edges {edges.shape} no coinciden')
    if np.any(fills_mean < 0.0):
        raise ValueError('fills_mean debe ser >= 0')

    volumes = rng.poisson(fills_mean, size=(cfg.n_scenarios, fills_mean.size))
    spot_moves = rng.normal(delta_s, cfg.price_noise_std, size=cfg.n_scenarios)
    return ScenarioBatch(pnl=volumes @ edges + hedge_term_base * spot_moves)


def _tail_count(n: int, alpha: float) -> int:
    return max(1, math.ceil(alpha * n - 1e-9))


def empirical_var(batch: ScenarioBatch, alpha: float) -> float:
    """La ceil(alpha*N)-ésima mayor pérdida."""
    losses = np.sort(batch.losses)[::-1]
    return float(losses[min(_tail_count(losses.size, alpha), losses.size) - 1])


def empirical_cvar_exact(batch: ScenarioBatch, alpha: float) -> float:
    """Media de las peores alpha*N pérdidas, con peso fraccional en la muestra frontera."""
    losses = np.sort(batch.losses)[::-1]
    k = min(alpha * losses.size, float(losses.size))
    full = int(math.floor(k + 1e-12))
    tail = losses[:full].sum()
    if full < losses.size:
        tail += (k - full) * losses[full]
    return float(tail / k)


def ru_objective(eta: float, batch: ScenarioBatch, cfg: CvarConfig) -> float:
    excess = batch.losses - eta
    if cfg.hard_hinge:
        tail = np.maximum(excess, 0.0)
    else:
        tail = cfg.tau_cvar * np.logaddexp(0.0, excess / cfg.tau_cvar)
    return float(eta + tail.mean() / cfg.tail_fraction)


def ru_derivative(eta: float, batch: ScenarioBatch, cfg: CvarConfig) -> float:
    """d/d eta del objetivo RU; creciente en eta."""
    excess = batch.losses - eta
    if cfg.hard_hinge:
        weight = (excess > 0.0).astype(float)
    else:
        weight = expit(excess / cfg.tau_cvar)
    return float(1.0 - weight.mean() / cfg.tail_fraction)


def _ru_curvature(eta: float, batch: ScenarioBatch, cfg: CvarConfig) -> float:
    s = expit((batch.losses - eta) / cfg.tau_cvar)
    return float(np.mean(s * (1.0 - s)) / (cfg.tail_fraction * cfg.tau_cvar))


def solve_eta(batch: ScenarioBatch, cfg: CvarConfig) -> float:
    """Newton con salvaguarda de bisección, arrancando en el VaR empírico."""
    eta = empirical_var(batch, cfg.tail_fraction)
    if cfg.hard_hinge:
        return eta

    losses = batch.losses
    lo = float(losses.min()) - BRACKET_WIDTH * cfg.tau_cvar
    hi = float(losses.max()) + BRACKET_WIDTH * cfg.tau_cvar
    slope = ru_derivative(eta, batch, cfg)
    for iteration in range(MAX_ITERATIONS):
        if abs(slope) < DERIVATIVE_TOL:
            logger.debug('solve_eta convergió en %d iteraciones (eta=%.6g)', iteration, eta)
            return eta
        if slope < 0.0:
            lo = eta
        else:
            hi = eta
        curvature = _ru_curvature(eta, batch, cfg)
        candidate = eta - slope / curvature if curvature > 0.0 else math.nan
        eta = candidate if lo < candidate < hi else 0.5 * (lo + hi)
        slope = ru_derivative(eta, batch, cfg)

    if abs(slope) < DERIVATIVE_TOL:
        return eta
    raise NoConvergenceError(
        f'solve_eta no convergió en {MAX_ITERATIONS} iteraciones (|f\'|={abs(slope):.3e})',
        iterations=MAX_ITERATIONS,
        residual=abs(slope),
    )


def cvar_smoothed(batch: ScenarioBatch, cfg: CvarConfig) -> float:
    return ru_objective(solve_eta(batch, cfg), batch, cfg)
