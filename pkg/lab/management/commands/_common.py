"""Opciones compartidas por train, diag y plot_data."""
from dataclasses import replace
from pathlib import Path

from django.conf import settings as django_settings
from django.core.management.base import CommandError

from lab.exceptions import ConfigError
from lab.serializers import build_agent_config, build_env_config, load_settings

# Códigos de salida (1: diagnóstico fallido u otro error del laboratorio)
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_NON_FINITE = 3


def add_run_arguments(parser):
    parser.add_argument('--config', default=None, help='Ruta a settings.json (por defecto, los valores de EnvConfig y AgentConfig)')
    parser.add_argument('--seed', type=int, default=None, help='Semilla; reemplaza la del archivo')
    parser.add_argument('--out', default=None, help='Directorio de salida')
    parser.add_argument(
        '--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
        help='Reemplaza una clave de settings.json (valor como literal JSON); repetible',
    )


def run_settings_from_options(options):
    """RunSettings efectivo o CommandError con código 2."""
    try:
        run_settings = load_settings(options.get('config'), options.get('overrides') or ())
    except ConfigError as exc:
        raise CommandError(f'Configuración inválida:\n{exc}', returncode=EXIT_CONFIG) from exc
    if options.get('seed') is not None:
        if options['seed'] < 0:
            raise CommandError('--seed debe ser >= 0', returncode=EXIT_CONFIG)
        run_settings = replace(run_settings, seed=options['seed'])
    return run_settings


def library_configs(run_settings):
    """(EnvConfig, AgentConfig); los ValueError de las dataclasses salen con código 2."""
    try:
        return build_env_config(run_settings), build_agent_config(run_settings)
    except ValueError as exc:
        raise CommandError(f'Configuración inválida: {exc}', returncode=EXIT_CONFIG) from exc


def output_dir(options, run_settings) -> Path:
    if options.get('out'):
        return Path(options['out'])
    if run_settings.out_dir:
        return Path(run_settings.out_dir)
    return Path(django_settings.ESSVI_MM_OUTPUT_DIR)
