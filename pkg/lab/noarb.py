"""
Penalizaciones suaves de no-arbitraje estático sobre una malla de precios.

- BF: convexidad en K vía segundas diferencias, normalizada por el nivel de precios.
- CAL: monotonía en T entre vencimientos consecutivos.
- Shape: rugosidad entre vencimientos de los parámetros eSSVI.

El hinge max(x, 0) se suaviza con s_tau(x) = tau*log(1 + e^(x/tau)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import GridTooSmallError
from .surface import EssviSurface

LOG2 = math.log(2.0)
# Piso de punto flotante para penalizaciones con hinge duro
NUMERICAL_FLOOR = 1e-8


@dataclass(frozen=True, slots=True)
class PenaltyConfig:
    """
    tau_arb: temperatura del softplus.
    eps_norm: piso del normalizador C_bar.
    hard_hinge: ReLU exacto (pruebas y diagnósticos).
    floor_correction: usa max(s_tau(x) - tau*log 2, 0), que vale 0 en mallas limpias.
    """

    tau_arb: float = 1e-3
    eps_norm: float = 1e-8
    hard_hinge: bool = False
    floor_correction: bool = False

    def __post_init__(self):
        if not self.hard_hinge and not self.tau_arb > 0.0:
            raise ValueError(f'tau_arb debe ser > 0 salvo con hard_hinge, recibido {self.tau_arb!r}')
        if not self.eps_norm > 0.0:
            raise ValueError(f'eps_norm debe ser > 0, recibido {self.eps_norm!r}')


@dataclass(frozen=True, slots=True)
class PriceLattice:
    strikes: np.ndarray
    maturities: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        strikes = np.asarray(self.strikes, dtype=float)
        maturities = np.asarray(self.maturities, dtype=float)
        prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        object.__setattr__(self, 'strikes', strikes)
        object.__setattr__(self, 'maturities', maturities)
        object.__setattr__(self, 'prices', prices)

        if prices.shape != (maturities.size, strikes.size):
            raise ValueError(
                f'prices tiene forma {prices.shape}, se esperaba {(maturities.size, strikes.size)}'
            )
        if np.any(np.diff(strikes) <= 0) or np.any(np.diff(maturities) <= 0):
            raise ValueError('Los ejes de strikes y vencimientos deben ser estrictamente crecientes')
        if strikes.size >= 2:
            steps = np.diff(strikes)
            if np.max(np.abs(steps - steps.mean())) > 1e-9 * np.max(np.abs(strikes)):
                raise ValueError('Los strikes de la malla deben estar igualmente espaciados')

    @property
    def delta_k(self) -> float:
        return float((self.strikes[-1] - self.strikes[0]) / (self.strikes.size - 1))


def softplus_tau(x, tau):
    """tau*log(1 + e^(x/tau)), estable para |x/tau| grande."""
    out = tau * np.logaddexp(0.0, np.asarray(x, dtype=float) / tau)
    return float(out) if np.ndim(out) == 0 else out


def softplus_tau_grad(x, tau):
    out = expit(np.asarray(x, dtype=float) / tau)
    return float(out) if np.ndim(out) == 0 else out


def hinge(x, cfg: PenaltyConfig):
    x = np.asarray(x, dtype=float)
    if cfg.hard_hinge:
        return np.maximum(x, 0.0)
    smooth = cfg.tau_arb * np.logaddexp(0.0, x / cfg.tau_arb)
    if cfg.floor_correction:
        return np.maximum(smooth - cfg.tau_arb * LOG2, 0.0)
    return smooth


def bf_penalty(lat: PriceLattice, cfg: PenaltyConfig):
    """BF medio y lista por vencimiento."""
    if lat.strikes.size < 3:
        raise GridTooSmallError(f'BF necesita >= 3 strikes, hay {lat.strikes.size}')
    dk = lat.delta_k
    second = (lat.prices[:, 2:] - 2.0 * lat.prices[:, 1:-1] + lat.prices[:, :-2]) / (dk * dk)
    c_bar = np.mean(np.abs(lat.prices), axis=1) + cfg.eps_norm
    per_maturity = np.mean(hinge(-second, cfg), axis=1) / c_bar
    return float(np.mean(per_maturity)), per_maturity.tolist()


def cal_penalty(lat: PriceLattice, cfg: PenaltyConfig):
    """CAL medio y lista por par de vencimientos consecutivos."""
    if lat.maturities.size < 2:
        raise GridTooSmallError(f'CAL necesita >= 2 vencimientos, hay {lat.maturities.size}')
    near, far = lat.prices[:-1], lat.prices[1:]
    c_bar = 0.5 * (np.mean(np.abs(near), axis=1) + np.mean(np.abs(far), axis=1)) + cfg.eps_norm
    per_pair = np.mean(hinge(near - far, cfg), axis=1) / c_bar
    return float(np.mean(per_pair)), per_pair.tolist()


def shape_penalty(surface: EssviSurface) -> float:
    """Media sobre pares consecutivos de (dtheta^2 + drho^2 + dpsi^2)."""
    if len(surface) < 2:
        raise GridTooSmallError(f'Shape necesita >= 2 vencimientos, hay {len(surface)}')
    total = (
        np.diff(surface.thetas) ** 2
        + np.diff(surface.rhos) ** 2
        + np.diff(surface.psis) ** 2
    )
    return float(np.mean(total))
