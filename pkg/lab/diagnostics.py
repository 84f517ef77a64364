"""
Diagnósticos ejecutables: sensibilidades analíticas frente a diferencias finitas,
monotonía de intensidades, tasas de la malla de no-arbitraje, cota de alas y CVaR.

Cada chequeo devuelve un DiagnosticReport con una tabla pandas; el comando
``diag`` los escribe como CSV y sale con código 1 si alguno falla.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import expit, ndtri

from .env import (
    ANCHOR_ACTION,
    Action,
    EnvConfig,
    MarketState,
    expected_pnl_and_delta,
    intensities,
    moneyness_weight,
    price_noise_std,
    quote_grid,
    reset,
    true_prices,
)
from .noarb import NUMERICAL_FLOOR, PenaltyConfig, PriceLattice, bf_penalty, cal_penalty
from .pricing import BsQuoteInputs, bs_call, bs_greeks, norm_pdf
from .risk import CvarConfig, ScenarioBatch, cvar_smoothed, empirical_cvar_exact, sample_scenarios, solve_eta
from .surface import RawEssviSlice, SurfaceCaps, action_partials, reparam, total_variance

logger = logging.getLogger(__name__)

FD_REL_STEP = 1e-5
QUOTE_RTOL = 1e-4
GREEK_RTOL = 1e-3
# Piso de redondeo de una diferencia central: NOISE_FACTOR * eps * nivel / h
NOISE_FACTOR = 1e3
ZERO_TOL = 1e-8
DEFAULT_ALPHAS = (0.001, 0.005, 0.01, 0.02)
DIAGNOSTIC_ACTION = Action(alpha=0.02, hedge=0.5, psi_scale=1.2, rho_shift=0.05, dual=0.0)


@dataclass(slots=True)
class DiagnosticReport:
    name: str
    passed: bool
    table: pd.DataFrame
    summary: dict = field(default_factory=dict)

    def failing_rows(self) -> pd.DataFrame:
        if 'passed' not in self.table.columns:
            return self.table.iloc[0:0]
        return self.table[~self.table['passed'].astype(bool)]


def fd_step(value: float) -> float:
    return FD_REL_STEP * max(1.0, abs(value))


def agrees(analytic, fd, rtol: float, level, h: float):
    """|a - fd| <= rtol*|a| + piso de redondeo de la diferencia central."""
    analytic = np.asarray(analytic, dtype=float)
    noise = NOISE_FACTOR * np.finfo(float).eps * np.maximum(1.0, np.abs(level)) / h
    return np.abs(analytic - np.asarray(fd, dtype=float)) <= rtol * np.abs(analytic) + noise


def _buckets(cfg: EnvConfig) -> dict:
    M, J = len(cfg.maturities), len(cfg.k_grid)
    return {
        'maturity': np.repeat(cfg.maturity_array, J),
        'k': np.tile(cfg.k_array, M),
    }


def _maturity_column(cfg: EnvConfig) -> np.ndarray:
    return np.maximum(cfg.maturity_array, cfg.caps.t_min)[:, None]


def _surface_action_partials(state: MarketState, action: Action, cfg: EnvConfig):
    """Matrices M x J de d w~/d rho_shift y d w~/d psi_scale; ClampActiveError si hay clamp."""
    rows = [
        action_partials(sl, (action.psi_scale, action.rho_shift), cfg.k_array, cfg.caps)
        for sl in state.estimate.slices
    ]
    return np.vstack([r[0] for r in rows]), np.vstack([r[1] for r in rows])


def _central(fn, action: Action, name: str):
    value = getattr(action, name)
    h = fd_step(value)
    up = fn(replace(action, **{name: value + h}))
    down = fn(replace(action, **{name: value - h}))
    return up, down, h


# ==========================
# Sensibilidades de cotización
# ==========================
def quote_sensitivities(state: MarketState, action: Action, cfg: EnvConfig, rtol: float = QUOTE_RTOL) -> DiagnosticReport:
    """
    Jacobiano de mid/ask/bid/intensidades respecto a alpha, rho-shift, psi-scale y dual.

    d mid/d p = Vega/(2*sigma*T) * d w~/d p
    d ask/d alpha = S*sigma*sqrt(T)*s0, d bid/d alpha = -d ask/d alpha mientras bid > 0
    """
    S = state.spot
    T = _maturity_column(cfg)
    p = cfg.intensity
    base = quote_grid(state, action, cfg)
    c_star = true_prices(state, cfg)
    greeks = bs_greeks(BsQuoteInputs(spot=S, strike=base.strikes[None, :], maturity=T, vol=base.vol))
    dw_rho, dw_psi = _surface_action_partials(state, action, cfg)

    chain = greeks.vega / (2.0 * base.vol * T)
    unit = S * base.vol * np.sqrt(T) * p.s0
    interior_bid = base.mid - base.half_spread > 0.0
    d_ask = unit * np.ones_like(base.mid)
    d_bid = np.where(interior_bid, -unit, 0.0)
    weight = p.lambda0 * moneyness_weight(cfg.k_grid, cfg)
    s_buy = expit(-p.beta * (base.ask - c_star))
    s_sell = expit(-p.beta * (c_star - base.bid))
    analytic = {
        'd_mid_d_alpha': np.zeros_like(base.mid),
        'd_ask_d_alpha': d_ask,
        'd_bid_d_alpha': d_bid,
        'd_mid_d_rho_shift': chain * dw_rho,
        'd_mid_d_psi_scale': chain * dw_psi,
        'd_lambda_buy_d_alpha': -p.beta * weight * s_buy * (1.0 - s_buy) * d_ask,
        'd_lambda_sell_d_alpha': p.beta * weight * s_sell * (1.0 - s_sell) * d_bid,
    }

    requote = lambda a: quote_grid(state, a, cfg)
    up, down, h_alpha = _central(requote, action, 'alpha')
    lam_up = intensities(up.ask, up.bid, c_star, cfg.k_grid, cfg)
    lam_down = intensities(down.ask, down.bid, c_star, cfg.k_grid, cfg)
    # bid = max(mid - half, 0) tiene un quiebre; se excluyen buckets que lo cruzan
    smooth = (up.mid - up.half_spread > 0.0) == (down.mid - down.half_spread > 0.0)
    fd = {
        'd_mid_d_alpha': (up.mid - down.mid) / (2 * h_alpha),
        'd_ask_d_alpha': (up.ask - down.ask) / (2 * h_alpha),
        'd_bid_d_alpha': (up.bid - down.bid) / (2 * h_alpha),
        'd_lambda_buy_d_alpha': (lam_up[0] - lam_down[0]) / (2 * h_alpha),
        'd_lambda_sell_d_alpha': (lam_up[1] - lam_down[1]) / (2 * h_alpha),
    }
    steps = dict.fromkeys(fd, h_alpha)
    for name in ('rho_shift', 'psi_scale'):
        up_p, down_p, h = _central(requote, action, name)
        fd[f'd_mid_d_{name}'] = (up_p.mid - down_p.mid) / (2 * h)
        steps[f'd_mid_d_{name}'] = h
    up_d, down_d, h_dual = _central(requote, action, 'dual')
    dual_effect = np.maximum.reduce([
        np.abs(up_d.mid - down_d.mid), np.abs(up_d.ask - down_d.ask), np.abs(up_d.bid - down_d.bid)
    ]) / (2 * h_dual)

    levels = {name: (np.maximum(base.mid, 1.0) if 'lambda' not in name else p.lambda0) for name in analytic}
    table = _buckets(cfg)
    ok = np.ones(base.mid.shape, dtype=bool)
    for name, value in analytic.items():
        match = agrees(value, fd[name], rtol, levels[name], steps[name])
        if name in ('d_bid_d_alpha', 'd_lambda_sell_d_alpha'):
            match |= ~smooth
        table[f'{name}_analytic'] = value.ravel()
        table[f'{name}_fd'] = fd[name].ravel()
        ok &= match
    table['dual_effect_fd'] = dual_effect.ravel()

    atm = np.abs(cfg.k_array) < 1e-12
    atm_ok = np.ones_like(ok)
    for name in ('d_mid_d_rho_shift', 'd_mid_d_psi_scale'):
        atm_ok[:, atm] &= (np.abs(analytic[name][:, atm]) < ZERO_TOL) & (np.abs(fd[name][:, atm]) < 1e-6 * S)
    signs_ok = (analytic['d_ask_d_alpha'] > 0.0) & (analytic['d_lambda_buy_d_alpha'] < 0.0)
    signs_ok &= ~interior_bid | ((analytic['d_bid_d_alpha'] < 0.0) & (analytic['d_lambda_sell_d_alpha'] < 0.0))
    exact_zero = (fd['d_mid_d_alpha'] == 0.0) & (dual_effect == 0.0)

    passed_rows = ok & atm_ok & signs_ok & exact_zero
    table['passed'] = passed_rows.ravel()
    return DiagnosticReport(
        name='quote_sensitivities',
        passed=bool(passed_rows.all()),
        table=pd.DataFrame(table),
        summary={'buckets': int(passed_rows.size), 'failed': int((~passed_rows).sum())},
    )


def greek_sensitivity_check(state: MarketState, action: Action, cfg: EnvConfig, rtol: float = GREEK_RTOL) -> DiagnosticReport:
    """d Delta/d p = Vanna * d sigma/d p y d Vega/d p = Volga * d sigma/d p, contra FD de bs_greeks."""
    S = state.spot
    T = _maturity_column(cfg)
    base = quote_grid(state, action, cfg)
    greeks = bs_greeks(BsQuoteInputs(spot=S, strike=base.strikes[None, :], maturity=T, vol=base.vol))
    dw = dict(zip(('rho_shift', 'psi_scale'), _surface_action_partials(state, action, cfg)))

    def greeks_at(a):
        quoted = quote_grid(state, a, cfg)
        return bs_greeks(BsQuoteInputs(spot=S, strike=quoted.strikes[None, :], maturity=T, vol=quoted.vol))

    table = _buckets(cfg)
    ok = np.ones(base.mid.shape, dtype=bool)
    atm = np.abs(cfg.k_array) < 1e-12
    for name in ('rho_shift', 'psi_scale'):
        d_sigma = dw[name] / (2.0 * base.vol * T)
        up, down, h = _central(greeks_at, action, name)
        for greek, sens, level in (('delta', greeks.vanna, 1.0), ('vega', greeks.volga, greeks.vega)):
            analytic = sens * d_sigma
            fd = (getattr(up, greek) - getattr(down, greek)) / (2 * h)
            ok &= agrees(analytic, fd, rtol, level, h)
            ok[:, atm] &= np.abs(analytic[:, atm]) < ZERO_TOL
            table[f'd_{greek}_d_{name}_analytic'] = analytic.ravel()
            table[f'd_{greek}_d_{name}_fd'] = fd.ravel()
    table['passed'] = ok.ravel()
    return DiagnosticReport(
        name='greek_sensitivity_check',
        passed=bool(ok.all()),
        table=pd.DataFrame(table),
        summary={'buckets': int(ok.size), 'failed': int((~ok).sum())},
    )


def intensity_monotonicity_check(state: MarketState, cfg: EnvConfig, alphas=DEFAULT_ALPHAS,
                                 action: Action | None = None) -> DiagnosticReport:
    """
    lambda_buy y lambda_sell estrictamente decrecientes en alpha.

    lambda_sell solo se exige donde bid > 0 para todos los alphas (fuera de ahí el bid
    queda en 0 y la intensidad es constante).
    """
    alphas = [float(a) for a in alphas]
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError('alphas debe ser estrictamente creciente')
    action = action or ANCHOR_ACTION
    c_star = true_prices(state, cfg)
    buys, sells, bids_positive = [], [], []
    for alpha in alphas:
        quotes = quote_grid(state, replace(action, alpha=alpha), cfg)
        lam_buy, lam_sell = intensities(quotes.ask, quotes.bid, c_star, cfg.k_grid, cfg)
        buys.append(lam_buy)
        sells.append(lam_sell)
        bids_positive.append(quotes.bid > 0.0)

    shape = c_star.shape
    buy_strict = np.ones(shape, dtype=bool)
    sell_strict = np.ones(shape, dtype=bool)
    sell_checked = np.logical_and.reduce(bids_positive)
    for i in range(len(alphas) - 1):
        buy_strict &= buys[i + 1] < buys[i]
        sell_strict &= sells[i + 1] < sells[i]
    passed_rows = buy_strict & (sell_strict | ~sell_checked)

    table = _buckets(cfg)
    table['buy_strict'] = buy_strict.ravel()
    table['sell_strict'] = sell_strict.ravel()
    table['sell_checked'] = sell_checked.ravel()
    table['passed'] = passed_rows.ravel()
    return DiagnosticReport(
        name='intensity_monotonicity_check',
        passed=bool(passed_rows.all()),
        table=pd.DataFrame(table),
        summary={'alphas': alphas, 'failed': int((~passed_rows).sum())},
    )


def random_interior_states(cfg: EnvConfig, n: int, rng):
    """Pares (estado, acción) con spot y acción muestreados lejos de los clamps."""
    base = reset(cfg)
    pairs = []
    for _ in range(n):
        state = replace(base, spot=float(rng.uniform(90.0, 110.0)))
        action = Action(
            alpha=float(rng.uniform(0.005, 0.045)),
            hedge=float(rng.uniform(0.1, 0.9)),
            psi_scale=float(rng.uniform(0.7, 1.3)),
            rho_shift=float(rng.uniform(-0.15, 0.15)),
            dual=float(rng.uniform(0.0, 1.0)),
        )
        pairs.append((state, action))
    return pairs


def sensitivity_suite(cfg: EnvConfig, n_states: int, rng, alphas=DEFAULT_ALPHAS) -> DiagnosticReport:
    """Los tres chequeos de sensibilidad sobre n_states estados aleatorios."""
    rows = []
    for i, (state, action) in enumerate(random_interior_states(cfg, n_states, rng)):
        for report in (
            quote_sensitivities(state, action, cfg),
            greek_sensitivity_check(state, action, cfg),
            intensity_monotonicity_check(state, cfg, alphas, action),
        ):
            failing = report.failing_rows()
            rows.append({
                'state': i,
                'check': report.name,
                'spot': state.spot,
                'alpha': action.alpha,
                'psi_scale': action.psi_scale,
                'rho_shift': action.rho_shift,
                'failed_buckets': int(len(failing)),
                'passed': report.passed,
            })
    table = pd.DataFrame(rows)
    return DiagnosticReport(
        name='sens',
        passed=bool(table['passed'].all()) if len(table) else True,
        table=table,
        summary={'states': n_states, 'failed_checks': int((~table['passed']).sum()) if len(table) else 0},
    )


# ==========================
# Consistencia de malla
# ==========================
@dataclass(frozen=True, slots=True)
class GridSpec:
    """Malla BS de volatilidad plana para los experimentos de refinamiento."""

    spot: float = 100.0
    vol: float = 0.2
    strike_min: float = 70.0
    strike_max: float = 130.0
    maturity: float = 1.0
    t_min: float = 0.25
    t_max: float = 1.0
    base_delta_t: float = 0.25
    cal_delta_k: float = 1.0
    # Concavidad inyectada: -eps*tent(K) con eps = injection * C_bar
    injection: float = 0.01
    tent_center: float = 100.0
    tent_half_width: float = 2.0
    tau_soft: float = 1e-3


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def flat_vol_prices(spec: GridSpec, strikes, maturities) -> np.ndarray:
    T = np.asarray(maturities, dtype=float)[:, None]
    return bs_call(BsQuoteInputs(spot=spec.spot, strike=np.asarray(strikes)[None, :], maturity=T, vol=spec.vol))


def tent(strikes, center: float, half_width: float) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(strikes) - center) / half_width)


def grid_consistency_experiment(spec: GridSpec = GridSpec(), refinements=(1.0, 0.5, 0.25)) -> DiagnosticReport:
    """
    BF y CAL con hinge duro sobre mallas limpias y con violaciones inyectadas.

    - BF limpio: en el piso en todos los niveles, o razones consecutivas en [2.5, 6].
    - BF con concavidad inyectada: > 10 * piso en todos los niveles.
    - CAL limpio: 0 exacto con hinge duro y <= tau*log2/min C_bar con softplus.
    - CAL con filas intercambiadas: el peor par escala como Delta T.
    """
    refinements = [float(r) for r in refinements]
    if len(refinements) < 3:
        raise ValueError('Se necesitan >= 3 niveles de refinamiento')
    hard = PenaltyConfig(hard_hinge=True)
    soft = PenaltyConfig(tau_arb=spec.tau_soft)

    rows = []
    for dk in refinements:
        dt = spec.base_delta_t * dk / refinements[0]
        strikes = _axis(spec.strike_min, spec.strike_max, dk)
        clean = flat_vol_prices(spec, strikes, [spec.maturity])
        eps = spec.injection * float(np.mean(clean))
        injected = clean - eps * tent(strikes, spec.tent_center, spec.tent_half_width)[None, :]
        bf_clean, _ = bf_penalty(PriceLattice(strikes, [spec.maturity], clean), hard)
        bf_injected, _ = bf_penalty(PriceLattice(strikes, [spec.maturity], injected), hard)

        cal_strikes = _axis(spec.strike_min, spec.strike_max, spec.cal_delta_k)
        maturities = _axis(spec.t_min, spec.t_max, dt)
        prices = flat_vol_prices(spec, cal_strikes, maturities)
        cal_hard, _ = cal_penalty(PriceLattice(cal_strikes, maturities, prices), hard)
        cal_soft, _ = cal_penalty(PriceLattice(cal_strikes, maturities, prices), soft)
        soft_bound = spec.tau_soft * math.log(2.0) / float(np.min(np.mean(np.abs(prices), axis=1)))
        swap = int(np.argmin(np.abs(maturities[:-1] - 0.5 * (spec.t_min + spec.t_max))))
        swapped = prices.copy()
        swapped[[swap, swap + 1]] = swapped[[swap + 1, swap]]
        _, per_pair = cal_penalty(PriceLattice(cal_strikes, maturities, swapped), hard)
        rows.append({
            'delta_k': dk,
            'delta_t': dt,
            'bf_clean': bf_clean,
            'bf_injected': bf_injected,
            'cal_clean_hard': cal_hard,
            'cal_clean_soft': cal_soft,
            'cal_soft_bound': soft_bound,
            'cal_swapped_max': max(per_pair),
            'cal_swapped_per_dt': max(per_pair) / dt,
        })
    table = pd.DataFrame(rows)

    bf_clean = table['bf_clean'].to_numpy()
    at_floor = bool(np.all(bf_clean <= NUMERICAL_FLOOR))
    ratios = bf_clean[:-1] / np.maximum(bf_clean[1:], np.finfo(float).tiny)
    table['bf_ratio'] = np.concatenate([[np.nan], ratios])
    bf_rate_ok = at_floor or bool(np.all((ratios >= 2.5) & (ratios <= 6.0)))
    detected = bool(np.all(table['bf_injected'] > 10.0 * NUMERICAL_FLOOR))
    cal_clean_ok = bool(np.all(table['cal_clean_hard'] == 0.0))
    cal_soft_ok = bool(np.all(table['cal_clean_soft'] <= table['cal_soft_bound'] * (1.0 + 1e-9)))
    c = 0.5 * table['cal_swapped_per_dt'].iloc[0]
    cal_scaling_ok = bool(np.all(table['cal_swapped_max'] >= c * table['delta_t']))
    monotone = bool(np.all(np.diff(bf_clean) <= 0.0))
    summary = {
        'bf_at_floor': at_floor,
        'bf_rate_ok': bf_rate_ok,
        'bf_injection_detected': detected,
        'cal_clean_zero': cal_clean_ok,
        'cal_soft_within_bound': cal_soft_ok,
        'cal_swap_scales_with_dt': cal_scaling_ok,
        'bf_clean_monotone': monotone,
    }
    table['passed'] = bf_rate_ok and detected and cal_clean_ok and cal_soft_ok and cal_scaling_ok
    return DiagnosticReport('grid', passed=all(summary.values()), table=table, summary=summary)


# ==========================
# Cota de alas
# ==========================
def wing_bound_sweep(n_samples: int = 1000, k_eval: float = 50.0, caps: SurfaceCaps | None = None, rng=None) -> DiagnosticReport:
    """Máximo de w(k)/|k| en k = +-k_eval sobre slices admisibles con el wing cap."""
    caps = caps or SurfaceCaps()
    rng = rng if rng is not None else np.random.default_rng(0)
    rows = []
    for _ in range(n_samples):
        raw = RawEssviSlice(
            log_theta=float(rng.uniform(math.log(1e-3), 0.0)),
            rho_raw=float(rng.normal(0.0, 1.5)),
            psi_raw=float(rng.normal(0.0, 2.0)),
        )
        sl = reparam(raw, caps)
        slope = max(total_variance(sl, k_eval), total_variance(sl, -k_eval)) / k_eval
        rows.append({'theta': sl.theta, 'rho': sl.rho, 'psi': sl.psi, 'theta_phi': sl.psi * math.sqrt(sl.theta), 'slope': slope})
    table = pd.DataFrame(rows)
    max_slope = float(table['slope'].max()) if len(table) else 0.0
    bound_ok = max_slope <= caps.tau_max + 0.05
    lee_ok = max_slope < 2.0 if caps.tau_max < 2.0 else True
    table['passed'] = table['slope'] <= caps.tau_max + 0.05
    return DiagnosticReport(
        name='wing',
        passed=bool(bound_ok and lee_ok),
        table=table,
        summary={'max_slope': max_slope, 'tau_max': caps.tau_max, 'lee_barrier_ok': lee_ok},
    )


# ==========================
# CVaR
# ==========================
def cvar_smoothing_check(rng, taus=(1e-2, 1e-3, 1e-4), n_batches: int = 200, alpha: float = 0.05,
                         normal_scenarios: int = 10_000) -> DiagnosticReport:
    """0 <= cvar_smoothed - cvar exacto <= tau*log2/alpha y la cola de N(0,1)."""
    rows = []
    for tau in taus:
        cfg = CvarConfig(tail_fraction=alpha, tau_cvar=tau)
        for b in range(n_batches):
            size = int(rng.integers(20, 500))
            batch = ScenarioBatch(pnl=rng.normal(rng.uniform(-1.0, 1.0), rng.uniform(0.1, 3.0), size))
            exact = empirical_cvar_exact(batch, alpha)
            smoothed = cvar_smoothed(batch, cfg)
            bound = tau * math.log(2.0) / alpha
            slack = 1e-9 * max(1.0, abs(exact))
            rows.append({
                'check': 'batch',
                'tau': tau,
                'batch': b,
                'size': size,
                'exact': exact,
                'smoothed': smoothed,
                'bound': bound,
                'passed': -slack <= smoothed - exact <= bound + slack,
            })

    # Cuantiles medios de N(0,1): CVaR_alpha = pdf(z_{1-alpha}) / alpha
    pnl = ndtri((np.arange(normal_scenarios) + 0.5) / normal_scenarios)
    reference = float(norm_pdf(ndtri(1.0 - alpha))) / alpha
    normal = cvar_smoothed(ScenarioBatch(pnl=pnl), CvarConfig(tail_fraction=alpha, tau_cvar=1e-3))
    rows.append({
        'check': 'normal_tail',
        'tau': 1e-3,
        'batch': -1,
        'size': normal_scenarios,
        'exact': reference,
        'smoothed': normal,
        'bound': 0.05,
        'passed': abs(normal - reference) <= 0.05,
    })
    table = pd.DataFrame(rows)
    return DiagnosticReport(
        name='cvar_smoothing_check',
        passed=bool(table['passed'].all()),
        table=table,
        summary={'normal_tail': normal, 'normal_reference': reference},
    )


@dataclass(frozen=True, slots=True)
class _ScenarioInputs:
    fills: np.ndarray
    edges: np.ndarray
    net_delta: float
    delta_s: float


def _scenario_inputs(state: MarketState, action: Action, cfg: EnvConfig) -> _ScenarioInputs:
    quotes = quote_grid(state, action, cfg)
    c_star = true_prices(state, cfg)
    lam_buy, lam_sell = intensities(quotes.ask, quotes.bid, c_star, cfg.k_grid, cfg)
    deltas = bs_greeks(
        BsQuoteInputs(spot=state.spot, strike=quotes.strikes[None, :], maturity=_maturity_column(cfg), vol=quotes.vol)
    ).delta
    _, net_delta = expected_pnl_and_delta(lam_buy, lam_sell, quotes.ask, quotes.bid, c_star, deltas)
    return _ScenarioInputs(
        fills=np.concatenate([lam_buy.ravel(), lam_sell.ravel()]),
        edges=np.concatenate([(quotes.ask - c_star).ravel(), (c_star - quotes.bid).ravel()]),
        net_delta=net_delta,
        delta_s=0.0,
    )


def _scenario_pnl(inputs: _ScenarioInputs, hedge: float, cfg: CvarConfig, seed) -> ScenarioBatch:
    return sample_scenarios(
        inputs.fills, inputs.edges, hedge * inputs.net_delta, inputs.delta_s, cfg, np.random.default_rng(seed)
    )


def pathwise_hedge_gradient(inputs: _ScenarioInputs, hedge: float, cfg: CvarConfig, seed) -> float:
    """
    d CVaR_tau / d hedge por el canal gaussiano, con eta* fijo (teorema de la envolvente):
    mean(logistic((L - eta*)/tau) * dL/dh) / alpha.
    """
    batch = _scenario_pnl(inputs, hedge, cfg, seed)
    unit = _scenario_pnl(inputs, 1.0, cfg, seed).pnl - _scenario_pnl(inputs, 0.0, cfg, seed).pnl
    eta = solve_eta(batch, cfg)
    weight = expit((batch.losses - eta) / cfg.tau_cvar)
    return float(np.mean(weight * -unit) / cfg.tail_fraction)


def crn_fd_hedge_gradient(inputs: _ScenarioInputs, hedge: float, cfg: CvarConfig, seed, h: float | None = None,
                          seed_down=None) -> float:
    """Diferencia central; con seed_down=None ambos lados comparten números aleatorios."""
    h = h or fd_step(hedge)
    up = cvar_smoothed(_scenario_pnl(inputs, hedge + h, cfg, seed), cfg)
    down = cvar_smoothed(_scenario_pnl(inputs, hedge - h, cfg, seed if seed_down is None else seed_down), cfg)
    return (up - down) / (2 * h)


def cvar_gradient_check(cfg: EnvConfig, rng, n_scenarios: int = 10_000, taus=(1e-2, 1e-3),
                        variance_scenarios: int = 2_000, variance_repeats: int = 10,
                        action: Action = DIAGNOSTIC_ACTION) -> DiagnosticReport:
    """
    Gradiente pathwise del CVaR suavizado respecto a la cobertura contra FD con CRN,
    el caso inerte sin ruido de precio y la reducción de varianza de CRN.
    """
    state = reset(cfg)
    inputs = _scenario_inputs(state, action, cfg)
    noise = cfg.price_noise_std if cfg.price_noise_std is not None else price_noise_std(state, cfg)
    rows = []
    gradients = {}
    for tau in taus:
        cvar_cfg = replace(cfg.cvar, tau_cvar=tau, n_scenarios=n_scenarios, price_noise_std=noise, hard_hinge=False)
        seed = int(rng.integers(2**32))
        pathwise = pathwise_hedge_gradient(inputs, action.hedge, cvar_cfg, seed)
        fd = crn_fd_hedge_gradient(inputs, action.hedge, cvar_cfg, seed)
        gradients[tau] = pathwise
        rows.append({
            'check': 'pathwise_vs_crn_fd',
            'tau': tau,
            'analytic': pathwise,
            'fd': fd,
            'passed': abs(pathwise - fd) <= 1e-2 * abs(pathwise) + 1e-8,
        })

    inert_cfg = replace(cfg.cvar, n_scenarios=n_scenarios, price_noise_std=0.0, hard_hinge=False)
    seed = int(rng.integers(2**32))
    inert = pathwise_hedge_gradient(inputs, action.hedge, inert_cfg, seed)
    inert_fd = crn_fd_hedge_gradient(inputs, action.hedge, inert_cfg, seed)
    rows.append({
        'check': 'inert_without_noise',
        'tau': inert_cfg.tau_cvar,
        'analytic': inert,
        'fd': inert_fd,
        'passed': abs(inert) <= 1e-12 and abs(inert_fd) <= 1e-6,
    })

    var_cfg = replace(cfg.cvar, n_scenarios=variance_scenarios, price_noise_std=noise, hard_hinge=False)
    h = 0.05
    crn, independent = [], []
    for _ in range(variance_repeats):
        s1, s2 = (int(x) for x in rng.integers(2**32, size=2))
        crn.append(crn_fd_hedge_gradient(inputs, action.hedge, var_cfg, s1, h=h))
        independent.append(crn_fd_hedge_gradient(inputs, action.hedge, var_cfg, s1, h=h, seed_down=s2))
    var_crn = float(np.var(crn))
    var_independent = float(np.var(independent))
    ratio = var_independent / max(var_crn, np.finfo(float).tiny)
    rows.append({
        'check': 'crn_variance_reduction',
        'tau': var_cfg.tau_cvar,
        'analytic': var_crn,
        'fd': var_independent,
        'passed': ratio >= 10.0,
    })

    table = pd.DataFrame(rows)
    gap = None
    if len(taus) >= 2:
        a, b = gradients[taus[0]], gradients[taus[-1]]
        gap = abs(a - b) / max(abs(b), 1e-12)
    return DiagnosticReport(
        name='cvar_gradient_check',
        passed=bool(table['passed'].all()),
        table=table,
        summary={'net_delta': inputs.net_delta, 'price_noise_std': noise, 'variance_ratio': ratio, 'temperature_gap': gap},
    )
