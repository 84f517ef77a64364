"""Black-Scholes con tasa y carry cero: precio de call y griegas (Delta, Vega, Vanna, Volga)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .surface import SurfaceCaps

SQRT_2PI = math.sqrt(2.0 * math.pi)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def norm_cdf(x):
    return _scalar(ndtr(x))


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _scalar(np.exp(-0.5 * x * x) / SQRT_2PI)


@dataclass(frozen=True, slots=True)
class BsQuoteInputs:
    """S, K, T, sigma. Acepta escalares o arrays que hagan broadcasting entre si."""

    spot: float | np.ndarray
    strike: float | np.ndarray
    maturity: float | np.ndarray
    vol: float | np.ndarray

    def __post_init__(self):
        for name in ('spot', 'strike', 'maturity', 'vol'):
            value = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(value) & (value > 0.0)):
                raise ValueError(f'{name} debe ser finito y > 0')

    @property
    def log_moneyness(self):
        return _scalar(np.log(np.asarray(self.strike, dtype=float) / np.asarray(self.spot, dtype=float)))

    def clamped(self, caps: SurfaceCaps) -> BsQuoteInputs:
        return BsQuoteInputs(
            spot=self.spot,
            strike=self.strike,
            maturity=np.maximum(self.maturity, caps.t_min),
            vol=np.maximum(self.vol, caps.sigma_min),
        )


class BsGreeks(NamedTuple):
    delta: float | np.ndarray
    vega: float | np.ndarray
    vanna: float | np.ndarray
    volga: float | np.ndarray


def _d_plus_minus(inputs: BsQuoteInputs):
    S = np.asarray(inputs.spot, dtype=float)
    K = np.asarray(inputs.strike, dtype=float)
    T = np.asarray(inputs.maturity, dtype=float)
    sigma = np.asarray(inputs.vol, dtype=float)
    sd = sigma * np.sqrt(T)
    d_plus = (np.log(S / K) + 0.5 * sd * sd) / sd
    return S, K, T, sigma, d_plus, d_plus - sd


def bs_call(inputs: BsQuoteInputs):
    """C = S*N(d+) - K*N(d-), acotado a [max(S-K, 0), S]."""
    S, K, _, _, d_plus, d_minus = _d_plus_minus(inputs)
    price = S * ndtr(d_plus) - K * ndtr(d_minus)
    return _scalar(np.clip(price, np.maximum(S - K, 0.0), S))


def bs_greeks(inputs: BsQuoteInputs) -> BsGreeks:
    S, _, T, sigma, d_plus, d_minus = _d_plus_minus(inputs)
    pdf = np.exp(-0.5 * d_plus * d_plus) / SQRT_2PI
    vega = S * np.sqrt(T) * pdf
    # Vanna = d Delta / d sigma, Volga = d Vega / d sigma
    vanna = -pdf * d_minus / sigma
    volga = vega * d_plus * d_minus / sigma
    return BsGreeks(
        delta=_scalar(ndtr(d_plus)),
        vega=_scalar(vega),
        vanna=_scalar(vanna),
        volga=_scalar(volga),
    )
