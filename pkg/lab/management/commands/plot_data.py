from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from lab.artifacts import write_plot_data
from lab.exceptions import ArtifactError, ConfigError

from ._common import EXIT_CONFIG


class Command(BaseCommand):
    help = 'Genera pnl_hist.csv, surface_compare.csv y training_curves.csv a partir de una corrida'

    def add_arguments(self, parser):
        parser.add_argument('run_dir', help='Directorio con settings.json, run_log.csv y step_log.csv')
        parser.add_argument('--out', default=None, help='Directorio de salida (por defecto, run_dir)')

    def handle(self, *args, **options):
        run_dir = Path(options['run_dir'])
        out_dir = Path(options['out']) if options['out'] else run_dir
        try:
            paths = write_plot_data(run_dir, out_dir)
        except (ArtifactError, ConfigError) as exc:
            raise CommandError(f'No se pueden generar las series: {exc}', returncode=EXIT_CONFIG) from exc
        for name, path in paths.items():
            self.stdout.write(f'  {name}: {path}')
        self.stdout.write(self.style.SUCCESS(f'Series de plot-data escritas en {out_dir}'))
