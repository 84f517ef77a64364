"""
Artefactos en disco: settings.json, run_log.csv, step_log.csv y las series de plot-data.

CSV en UTF-8, coma, cabecera y LF; floats con 17 dígitos significativos.
Toda escritura es atómica (archivo temporal + os.replace).
"""
from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from .env import latent_surface
from .exceptions import ArtifactError
from .risk import ScenarioBatch, empirical_cvar_exact, empirical_var
from .serializers import RunSettings, build_env_config, load_settings
from .surface import deform, surface_implied_vols

logger = logging.getLogger(__name__)

SETTINGS_FILE = 'settings.json'
RUN_LOG_FILE = 'run_log.csv'
STEP_LOG_FILE = 'step_log.csv'

RUN_LOG_COLUMNS = (
    'episode', 'reward_sum', 'pnl_raw', 'pnl_adj', 'bf_mean', 'cal_mean', 'shape_mean',
    'cvar_mean', 'var5_steps', 'cvar5_steps', 'alpha_mean', 'hedge_mean', 'act_std',
)
STEP_LOG_COLUMNS = (
    'episode', 't', 'spot', 'reward', 'pnl_quote', 'pnl_hedge', 'bf', 'cal', 'shape', 'cvar',
    'alpha', 'hedge', 'psi_scale', 'rho_shift', 'dual',
)
PNL_HIST_COLUMNS = ('bin_left', 'bin_right', 'count', 'var5', 'cvar5')
SURFACE_COMPARE_COLUMNS = ('maturity', 'k', 'sigma_true', 'sigma_quoted')
TRAINING_CURVES_COLUMNS = (
    'episode', 'reward', 'pnl_adj', 'bf', 'cal', 'shape', 'cvar', 'hedge_mean', 'alpha_mean', 'act_std',
)

TAIL_FRACTION = 0.05
HIST_BINS = 50


def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            write(handle)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(frame: pd.DataFrame, path) -> None:
    _atomic_write(path, lambda h: frame.to_csv(h, index=False, float_format='%.17g', lineterminator='\n'))


def write_text(text: str, path) -> None:
    _atomic_write(path, lambda h: h.write(text))


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision='round_trip')


def frame_from_rows(rows, columns) -> pd.DataFrame:
    return pd.DataFrame([{c: row[c] for c in columns} for row in rows], columns=list(columns))


def write_run(out_dir, settings: RunSettings, run_rows, step_rows) -> dict:
    """Escribe los tres artefactos de un entrenamiento; devuelve sus rutas."""
    out_dir = Path(out_dir)
    paths = {
        'settings': out_dir / SETTINGS_FILE,
        'run_log': out_dir / RUN_LOG_FILE,
        'step_log': out_dir / STEP_LOG_FILE,
    }
    write_text(settings.to_json(), paths['settings'])
    write_csv(frame_from_rows(run_rows, RUN_LOG_COLUMNS), paths['run_log'])
    write_csv(frame_from_rows(step_rows, STEP_LOG_COLUMNS), paths['step_log'])
    return paths


def read_run(run_dir):
    """(settings, run_log, step_log); ArtifactError si falta algo o no hay pasos."""
    run_dir = Path(run_dir)
    for name in (SETTINGS_FILE, RUN_LOG_FILE, STEP_LOG_FILE):
        if not (run_dir / name).is_file():
            raise ArtifactError(f'{run_dir / name}: no existe')
    settings = load_settings(run_dir / SETTINGS_FILE)
    try:
        run_log = read_csv(run_dir / RUN_LOG_FILE)
        step_log = read_csv(run_dir / STEP_LOG_FILE)
    except pd.errors.EmptyDataError as exc:
        raise ArtifactError(f'{run_dir}: CSV vacío') from exc
    if step_log.empty or run_log.empty:
        raise ArtifactError(f'{run_dir}: la corrida no tiene pasos registrados')
    missing = [c for c in STEP_LOG_COLUMNS if c not in step_log.columns]
    missing += [c for c in RUN_LOG_COLUMNS if c not in run_log.columns]
    if missing:
        raise ArtifactError(f'{run_dir}: faltan columnas {missing}')
    return settings, run_log, step_log


# ==========================
# Series de plot-data
# ==========================
def pnl_histogram(step_log: pd.DataFrame, bins: int = HIST_BINS, alpha: float = TAIL_FRACTION) -> pd.DataFrame:
    """Histograma del P&L bruto por paso con marcadores VaR/CVaR (orientación P&L)."""
    pnl = (step_log['pnl_quote'] + step_log['pnl_hedge']).to_numpy(dtype=float)
    counts, edges = np.histogram(pnl, bins=bins)
    batch = ScenarioBatch(pnl=pnl)
    frame = pd.DataFrame({
        'bin_left': edges[:-1],
        'bin_right': edges[1:],
        'count': counts,
    })
    frame['var5'] = -empirical_var(batch, alpha)
    frame['cvar5'] = -empirical_cvar_exact(batch, alpha)
    return frame[list(PNL_HIST_COLUMNS)]


def surface_compare(settings: RunSettings, step_log: pd.DataFrame) -> pd.DataFrame:
    """sigma latente frente a la cotizada con la deformación del último paso (M x J filas)."""
    cfg = build_env_config(settings)
    latent = latent_surface(cfg)
    last = step_log.iloc[-1]
    quoted = deform(latent, float(last['psi_scale']), float(last['rho_shift']), cfg.caps)
    sigma_true = surface_implied_vols(latent, cfg.k_array, cfg.caps)
    sigma_quoted = surface_implied_vols(quoted, cfg.k_array, cfg.caps)
    M, J = sigma_true.shape
    return pd.DataFrame({
        'maturity': np.repeat(cfg.maturity_array, J),
        'k': np.tile(cfg.k_array, M),
        'sigma_true': sigma_true.ravel(),
        'sigma_quoted': sigma_quoted.ravel(),
    })


def training_curves(run_log: pd.DataFrame) -> pd.DataFrame:
    frame = run_log.rename(columns={
        'reward_sum': 'reward',
        'bf_mean': 'bf',
        'cal_mean': 'cal',
        'shape_mean': 'shape',
        'cvar_mean': 'cvar',
    })
    return frame[list(TRAINING_CURVES_COLUMNS)]


def write_plot_data(run_dir, out_dir) -> dict:
    settings, run_log, step_log = read_run(run_dir)
    out_dir = Path(out_dir)
    outputs = {
        'pnl_hist': (pnl_histogram(step_log), out_dir / 'pnl_hist.csv'),
        'surface_compare': (surface_compare(settings, step_log), out_dir / 'surface_compare.csv'),
        'training_curves': (training_curves(run_log), out_dir / 'training_curves.csv'),
    }
    for frame, path in outputs.values():
        write_csv(frame, path)
    logger.info('Series de plot-data escritas en %s', out_dir)
    return {name: path for name, (_, path) in outputs.items()}


def write_report(report, out_dir) -> Path:
    path = Path(out_dir) / f'diag_{report.name}.csv'
    write_csv(report.table, path)
    return path
