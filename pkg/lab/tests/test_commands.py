import json
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import patch

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from lab.artifacts import (
    PNL_HIST_COLUMNS,
    RUN_LOG_COLUMNS,
    STEP_LOG_COLUMNS,
    SURFACE_COMPARE_COLUMNS,
    TRAINING_CURVES_COLUMNS,
    read_csv,
)
from lab.exceptions import NonFiniteGradientError, NoConvergenceError, ShapeMismatchError
from lab.serializers import RunSettings

TINY = [
    'steps_per_episode=6',
    'penalty_strikes=11',
    'n_scenarios=16',
    'episodes=2',
    'hidden_size=8',
    'epochs=1',
    'minibatch_size=4',
    'warm_start_steps=20',
]


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def call(self, *args, **options):
        out = StringIO()
        call_command(*args, stdout=out, **options)
        return out.getvalue()

    def train(self, name, seed=0, overrides=TINY):
        out_dir = self.dir / name
        self.call('train', '--seed', str(seed), '--out', str(out_dir), *[f'--set={o}' for o in overrides])
        return out_dir


class TrainCommandTests(CommandTestCase):
    def test_train_writes_the_artifacts(self):
        run = self.train('a')
        settings = json.loads((run / 'settings.json').read_text(encoding='utf-8'))
        self.assertEqual(settings['episodes'], 2)
        self.assertEqual(settings['out_dir'], str(run))
        run_log = read_csv(run / 'run_log.csv')
        step_log = read_csv(run / 'step_log.csv')
        self.assertEqual(tuple(run_log.columns), RUN_LOG_COLUMNS)
        self.assertEqual(tuple(step_log.columns), STEP_LOG_COLUMNS)
        self.assertEqual(list(run_log['episode']), [1, 2])
        self.assertEqual(len(step_log), 12)
        self.assertNotIn(b'\r\n', (run / 'run_log.csv').read_bytes())

    def test_same_seed_same_logs(self):
        first, second = self.train('a', seed=5), self.train('b', seed=5)
        for name in ('run_log.csv', 'step_log.csv'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_settings_file_reproduces_the_run(self):
        first = self.train('a', seed=2)
        second = self.dir / 'b'
        self.call('train', '--config', str(first / 'settings.json'), '--out', str(second))
        self.assertEqual((first / 'run_log.csv').read_bytes(), (second / 'run_log.csv').read_bytes())

    def test_invalid_json_exits_with_code_2(self):
        config = self.dir / 'bad.json'
        config.write_text('{"episodes": 2,}', encoding='utf-8')
        out_dir = self.dir / 'out'
        with self.assertRaises(CommandError) as ctx:
            self.call('train', '--config', str(config), '--out', str(out_dir))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn(f'{config}:1:', str(ctx.exception))
        self.assertFalse(out_dir.exists())

    def test_invalid_value_exits_with_code_2(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('train', '--out', str(self.dir / 'out'), '--set', 'gamma=2.0')
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('--set gamma', str(ctx.exception))

    def test_negative_seed(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('train', '--seed', '-1', '--out', str(self.dir / 'out'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_library_errors_map_to_exit_codes(self):
        cases = (
            (NoConvergenceError('eta no converge'), 1),
            (ShapeMismatchError('La red espera 3 entradas'), 1),
            (NonFiniteGradientError('gradiente NaN'), 3),
        )
        for error, code in cases:
            with self.subTest(error=type(error).__name__):
                with patch('lab.management.commands.train.train', side_effect=error):
                    with self.assertRaises(CommandError) as ctx:
                        self.train('error')
                self.assertEqual(ctx.exception.returncode, code)
                self.assertIn(str(error), str(ctx.exception))
                self.assertFalse((self.dir / 'error' / 'run_log.csv').exists())


class DiagCommandTests(CommandTestCase):
    def test_wing_and_grid_pass(self):
        for which in ('wing', 'grid'):
            output = self.call('diag', which, '--out', str(self.dir))
            self.assertIn('OK', output)
            self.assertTrue((self.dir / f'diag_{which}.csv').is_file())

    def test_sens_passes_on_a_few_states(self):
        self.call('diag', 'sens', '--states', '2', '--out', str(self.dir))
        table = read_csv(self.dir / 'diag_sens.csv')
        self.assertEqual(len(table), 6)
        self.assertTrue(table['passed'].all())

    def test_sens_fails_without_spread_unit(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('diag', 'sens', '--states', '2', '--out', str(self.dir), '--set', 's0=0.0')
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertTrue((self.dir / 'diag_sens.csv').is_file())


class PlotDataCommandTests(CommandTestCase):
    def test_series_from_a_run(self):
        run = self.train('run', seed=1)
        out_dir = self.dir / 'plots'
        self.call('plot_data', str(run), '--out', str(out_dir))
        hist = read_csv(out_dir / 'pnl_hist.csv')
        self.assertEqual(tuple(hist.columns), PNL_HIST_COLUMNS)
        self.assertEqual(len(hist), 50)
        self.assertEqual(int(hist['count'].sum()), 12)
        self.assertLessEqual(hist['cvar5'].iloc[0], hist['var5'].iloc[0])

        surface = read_csv(out_dir / 'surface_compare.csv')
        self.assertEqual(tuple(surface.columns), SURFACE_COMPARE_COLUMNS)
        defaults = RunSettings()
        self.assertEqual(len(surface), len(defaults.maturities) * defaults.k_points)

        curves = read_csv(out_dir / 'training_curves.csv')
        self.assertEqual(tuple(curves.columns), TRAINING_CURVES_COLUMNS)
        pd.testing.assert_series_equal(
            curves['reward'], read_csv(run / 'run_log.csv')['reward_sum'], check_names=False
        )

    def test_defaults_to_the_run_directory(self):
        run = self.train('run', seed=1)
        self.call('plot_data', str(run))
        self.assertTrue((run / 'training_curves.csv').is_file())

    def test_missing_run_exits_with_code_2(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('plot_data', str(self.dir / 'missing'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_empty_log_exits_with_code_2(self):
        run = self.dir / 'empty'
        run.mkdir()
        (run / 'settings.json').write_text(RunSettings().to_json(), encoding='utf-8')
        (run / 'run_log.csv').write_text(','.join(RUN_LOG_COLUMNS) + '\n', encoding='utf-8')
        (run / 'step_log.csv').write_text(','.join(STEP_LOG_COLUMNS) + '\n', encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            self.call('plot_data', str(run))
        self.assertEqual(ctx.exception.returncode, 2)
