from dataclasses import replace

from django.core.management.base import BaseCommand, CommandError

from lab.agent import train
from lab.artifacts import write_run
from lab.exceptions import EssviMmError, NonFiniteGradientError
from ._common import EXIT_FAILED, EXIT_NON_FINITE, add_run_arguments, library_configs, output_dir, run_settings_from_options


class Command(BaseCommand):
    help = 'Entrena el agente (warm-start + PPO) y escribe settings.json, run_log.csv y step_log.csv'

    def add_arguments(self, parser):
        add_run_arguments(parser)

    def handle(self, *args, **options):
        run_settings = run_settings_from_options(options)
        out_dir = output_dir(options, run_settings)
        run_settings = replace(run_settings, out_dir=str(out_dir))
        env_cfg, agent_cfg = library_configs(run_settings)

        self.stdout.write(
            f'Entrenando {agent_cfg.episodes} episodios de {env_cfg.steps_per_episode} pasos (semilla {run_settings.seed})...'
        )
        try:
            _, artifacts = train(env_cfg, agent_cfg, run_settings.seed)
        except NonFiniteGradientError as exc:
            raise CommandError(f'Entrenamiento abortado: {exc}', returncode=EXIT_NON_FINITE) from exc
        except EssviMmError as exc:
            raise CommandError(f'Entrenamiento fallido: {exc}', returncode=EXIT_FAILED) from exc

        if artifacts.warm_start is not None:
            report = artifacts.warm_start
            self.stdout.write(
                f'Warm-start: pérdida {report.initial_loss:.4g} -> {report.final_loss:.4g} '
                f'en {report.steps_run} pasos, BF+CAL={report.arb:.3e}'
            )
        paths = write_run(out_dir, run_settings, artifacts.run_rows, artifacts.step_rows)
        for row in artifacts.run_rows:
            self.stdout.write(
                f"  episodio {row['episode']}: pnl_adj={row['pnl_adj']:.4f} "
                f"bf={row['bf_mean']:.2e} cal={row['cal_mean']:.2e} hedge={row['hedge_mean']:.3f}"
            )
        self.stdout.write(self.style.SUCCESS(f'Artefactos escritos en {paths["settings"].parent}'))
