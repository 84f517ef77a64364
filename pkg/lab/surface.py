"""
Capa eSSVI de varianza total.

Por vencimiento T_m la superficie guarda (theta, rho, psi) con phi = psi / sqrt(theta):

    w(k) = theta/2 * (1 + rho*phi*k + g(k)),   g(k) = sqrt((phi*k + rho)^2 + 1 - rho^2)

El módulo cubre la reparametrización sin restricciones, el wing cap psi*sqrt(theta) <= tau_max,
la deformación de la acción (psi-scale, rho-shift) y las derivadas analíticas.
Todo son funciones puras sobre tipos inmutables.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .exceptions import ClampActiveError

logger = logging.getLogger(__name__)

# Margen de rho después del rho-shift
RHO_EPS = 1e-4
# Margen de psi bajo psi_max(rho) después del psi-scale
PSI_EPS_NUM = 1e-6
# log(theta) se recorta a este rango para que exp() no desborde
LOG_THETA_BOUND = 50.0


@dataclass(frozen=True, slots=True)
class SurfaceCaps:
    """Margen de butterfly, wing cap y pisos numéricos (sigma_min, T_min)."""

    eps_psi: float = 1e-3
    tau_max: float = 1.0
    sigma_min: float = 1e-4
    t_min: float = 1e-4

    def __post_init__(self):
        for name in ('eps_psi', 'tau_max', 'sigma_min', 't_min'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f'{name} debe ser finito y > 0, recibido {value!r}')


@dataclass(frozen=True, slots=True)
class RawEssviSlice:
    log_theta: float
    rho_raw: float
    psi_raw: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.log_theta, self.rho_raw, self.psi_raw)):
            raise ValueError(f'RawEssviSlice con valores no finitos: {self!r}')


@dataclass(frozen=True, slots=True)
class EssviSlice:
    theta: float
    rho: float
    psi: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta > 0.0):
            raise ValueError(f'theta debe ser > 0, recibido {self.theta!r}')
        if not abs(self.rho) < 1.0:
            raise ValueError(f'|rho| debe ser < 1, recibido {self.rho!r}')
        if not (0.0 <= self.psi < 2.0 / (1.0 + abs(self.rho))):
            raise ValueError(f'psi fuera de [0, 2/(1+|rho|)), recibido {self.psi!r}')

    @property
    def phi(self) -> float:
        return self.psi / math.sqrt(self.theta)


@dataclass(frozen=True, slots=True)
class EssviSurface:
    maturities: tuple[float, ...]
    slices: tuple[EssviSlice, ...]

    def __post_init__(self):
        object.__setattr__(self, 'maturities', tuple(float(t) for t in self.maturities))
        object.__setattr__(self, 'slices', tuple(self.slices))
        if len(self.maturities) != len(self.slices):
            raise ValueError(
                f'{len(self.maturities)} vencimientos para {len(self.slices)} slices'
            )
        if not self.maturities or self.maturities[0] <= 0.0:
            raise ValueError('Los vencimientos deben ser > 0')
        if any(b <= a for a, b in zip(self.maturities, self.maturities[1:])):
            raise ValueError(f'Vencimientos no estrictamente crecientes: {self.maturities}')

    def __len__(self):
        return len(self.slices)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.slices])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([s.rho for s in self.slices])

    @property
    def psis(self) -> np.ndarray:
        return np.array([s.psi for s in self.slices])


def psi_max(rho, caps: SurfaceCaps):
    """Cota de butterfly 2/(1+|rho|) - eps_psi."""
    return 2.0 / (1.0 + np.abs(rho)) - caps.eps_psi


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def apply_wing_cap(slice: EssviSlice, caps: SurfaceCaps) -> EssviSlice:
    """Proyecta psi para que psi*sqrt(theta) <= tau_max se cumpla exactamente."""
    root = math.sqrt(slice.theta)
    if slice.psi * root <= caps.tau_max:
        return slice
    psi = caps.tau_max / root
    # El cociente puede redondear un ulp por encima
    while psi * root > caps.tau_max:
        psi = math.nextafter(psi, 0.0)
    return EssviSlice(theta=slice.theta, rho=slice.rho, psi=psi)


def reparam(raw: RawEssviSlice, caps: SurfaceCaps) -> EssviSlice:
    """Mapa total de parámetros sin restricciones a un slice admisible."""
    theta = math.exp(min(max(raw.log_theta, -LOG_THETA_BOUND), LOG_THETA_BOUND))
    rho = math.tanh(raw.rho_raw)
    rho = min(max(rho, -1.0 + RHO_EPS), 1.0 - RHO_EPS)
    bound = float(psi_max(rho, caps))
    psi = min(bound * float(expit(raw.psi_raw)), bound - PSI_EPS_NUM)
    return apply_wing_cap(EssviSlice(theta=theta, rho=rho, psi=max(psi, 0.0)), caps)


def to_raw(slice: EssviSlice, caps: SurfaceCaps) -> RawEssviSlice:
    """Inversa de reparam (salvo el wing cap, que no es invertible)."""
    rho = min(max(slice.rho, -1.0 + RHO_EPS), 1.0 - RHO_EPS)
    ratio = slice.psi / float(psi_max(rho, caps))
    ratio = min(max(ratio, 1e-12), 1.0 - 1e-12)
    return RawEssviSlice(
        log_theta=math.log(slice.theta),
        rho_raw=math.atanh(rho),
        psi_raw=float(logit(ratio)),
    )


def is_admissible(slice: EssviSlice, caps: SurfaceCaps) -> bool:
    return (
        math.isfinite(slice.theta)
        and slice.theta > 0.0
        and abs(slice.rho) < 1.0
        and 0.0 <= slice.psi < float(psi_max(slice.rho, caps))
        and slice.psi * math.sqrt(slice.theta) <= caps.tau_max
    )


def essvi_total_variance(theta, rho, phi, k):
    """w(k) vectorizado; g se escribe de forma que g(0) = 1 exactamente."""
    x = phi * np.asarray(k, dtype=float)
    g = np.sqrt(1.0 + x * (x + 2.0 * rho))
    return 0.5 * theta * (1.0 + rho * x + g)


def total_variance(slice: EssviSlice, k):
    return _scalar(essvi_total_variance(slice.theta, slice.rho, slice.phi, k))


def implied_vol(w, T, caps: SurfaceCaps):
    """sigma = sqrt(w / max(T, T_min)) con piso sigma_min."""
    w = np.maximum(np.asarray(w, dtype=float), 0.0)
    T = np.maximum(np.asarray(T, dtype=float), caps.t_min)
    return _scalar(np.maximum(np.sqrt(w / T), caps.sigma_min))


def surface_total_variance(surface: EssviSurface, k) -> np.ndarray:
    """Matriz [M x J] de varianza total sobre la malla de log-moneyness k."""
    k = np.asarray(k, dtype=float)
    return np.vstack([essvi_total_variance(s.theta, s.rho, s.phi, k) for s in surface.slices])


def surface_implied_vols(surface: EssviSurface, k, caps: SurfaceCaps) -> np.ndarray:
    w = surface_total_variance(surface, k)
    T = np.asarray(surface.maturities)[:, None]
    return np.asarray(implied_vol(w, T, caps)).reshape(w.shape)


def _deform_slice(slice: EssviSlice, psi_scale: float, rho_shift: float, caps: SurfaceCaps) -> EssviSlice:
    rho = min(max(slice.rho + rho_shift, -1.0 + RHO_EPS), 1.0 - RHO_EPS)
    psi = min(slice.psi * psi_scale, float(psi_max(rho, caps)) - PSI_EPS_NUM)
    return apply_wing_cap(EssviSlice(theta=slice.theta, rho=rho, psi=max(psi, 0.0)), caps)


def deform(surface: EssviSurface, psi_scale: float, rho_shift: float, caps: SurfaceCaps) -> EssviSurface:
    """Deformación de la acción: theta fijo, rho + rho_shift, psi * psi_scale, con clamps."""
    if psi_scale == 1.0 and rho_shift == 0.0:
        return surface
    return EssviSurface(
        maturities=surface.maturities,
        slices=tuple(_deform_slice(s, psi_scale, rho_shift, caps) for s in surface.slices),
    )


def essvi_partials(slice: EssviSlice, k):
    """(dw/dtheta, dw/drho, dw/dphi) con phi fijo; vectorizado en k."""
    theta, rho, phi = slice.theta, slice.rho, slice.phi
    k = np.asarray(k, dtype=float)
    x = phi * k
    g = np.sqrt(1.0 + x * (x + 2.0 * rho))
    dw_dtheta = 0.5 * (1.0 + rho * x + g)
    dw_drho = 0.5 * theta * x * (1.0 + 1.0 / g)
    dw_dphi = 0.5 * theta * (rho * k + (x + rho) * k / g)
    return _scalar(dw_dtheta), _scalar(dw_drho), _scalar(dw_dphi)


def clamp_active(slice: EssviSlice, psi_scale: float, rho_shift: float, caps: SurfaceCaps) -> str | None:
    """Nombre del clamp que la deformación activaría, o None si el punto es interior."""
    rho = slice.rho + rho_shift
    if not (-1.0 + RHO_EPS < rho < 1.0 - RHO_EPS):
        return 'rho'
    psi = slice.psi * psi_scale
    if psi >= float(psi_max(rho, caps)) - PSI_EPS_NUM:
        return 'psi_max'
    if psi * math.sqrt(slice.theta) >= caps.tau_max:
        return 'wing_cap'
    return None


def action_partials(slice_pre_deform: EssviSlice, action, k, caps: SurfaceCaps | None = None):
    """
    Derivadas de w deformado respecto a rho-shift y psi-scale.

    d w~/d rho_shift = dw/drho en el slice deformado
    d w~/d psi_scale = dw/dphi en el slice deformado * phi (sin deformar)
    """
    caps = caps or SurfaceCaps()
    psi_scale, rho_shift = action
    active = clamp_active(slice_pre_deform, psi_scale, rho_shift, caps)
    if active is not None:
        raise ClampActiveError(
            f'Clamp {active} activo en psi_scale={psi_scale}, rho_shift={rho_shift}'
        )
    deformed = _deform_slice(slice_pre_deform, psi_scale, rho_shift, caps)
    _, dw_drho, dw_dphi = essvi_partials(deformed, k)
    return dw_drho, _scalar(np.asarray(dw_dphi) * slice_pre_deform.phi)
