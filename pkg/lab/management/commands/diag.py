import numpy as np
from django.core.management.base import BaseCommand, CommandError

from lab import diagnostics
from lab.artifacts import write_report
from lab.exceptions import EssviMmError
from ._common import EXIT_FAILED, add_run_arguments, library_configs, output_dir, run_settings_from_options

# Filas fallidas que se muestran por reporte
SHOWN_FAILURES = 10


class Command(BaseCommand):
    help = 'Ejecuta los diagnósticos numéricos (sens, grid, wing, cvar) y escribe un CSV por reporte'

    def add_arguments(self, parser):
        parser.add_argument('which', choices=['sens', 'grid', 'wing', 'cvar'])
        parser.add_argument('--states', type=int, default=50, help='Estados aleatorios para sens')
        add_run_arguments(parser)

    def run_reports(self, which, cfg, rng, states):
        if which == 'sens':
            return [diagnostics.sensitivity_suite(cfg, states, rng)]
        if which == 'grid':
            return [diagnostics.grid_consistency_experiment()]
        if which == 'wing':
            return [diagnostics.wing_bound_sweep(1000, 50.0, cfg.caps, rng)]
        return [diagnostics.cvar_smoothing_check(rng), diagnostics.cvar_gradient_check(cfg, rng)]

    def handle(self, *args, **options):
        run_settings = run_settings_from_options(options)
        out_dir = output_dir(options, run_settings)
        cfg, _ = library_configs(run_settings)
        rng = np.random.default_rng(run_settings.seed)

        try:
            reports = self.run_reports(options['which'], cfg, rng, options['states'])
        except EssviMmError as exc:
            raise CommandError(f'Diagnóstico {options["which"]} falló: {exc}', returncode=EXIT_FAILED) from exc

        failed = []
        for report in reports:
            path = write_report(report, out_dir)
            summary = ', '.join(f'{key}={value}' for key, value in report.summary.items())
            if report.passed:
                self.stdout.write(self.style.SUCCESS(f'{report.name}: OK ({summary}) -> {path}'))
            else:
                failed.append(report.name)
                self.stdout.write(self.style.ERROR(f'{report.name}: FALLO ({summary}) -> {path}'))
                rows = report.failing_rows()
                if len(rows):
                    self.stdout.write(rows.head(SHOWN_FAILURES).to_string(index=False))
        if failed:
            raise CommandError(f'Diagnósticos fallidos: {", ".join(failed)}', returncode=EXIT_FAILED)
