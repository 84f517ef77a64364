import json
import tempfile
from dataclasses import replace
from pathlib import Path

from django.test import SimpleTestCase

from lab.agent import AgentConfig
from lab.env import EnvConfig
from lab.exceptions import ConfigError
from lab.serializers import (
    RunSettings,
    RunSettingsSerializer,
    build_agent_config,
    build_env_config,
    load_settings,
    parse_override,
    validate_settings,
)


class RunSettingsTests(SimpleTestCase):
    def test_json_is_sorted_and_reloads(self):
        text = RunSettings().to_json()
        self.assertTrue(text.endswith('}\n'))
        data = json.loads(text)
        self.assertEqual(list(data), sorted(data))
        self.assertEqual(RunSettings.from_dict(data), RunSettings())

    def test_defaults_build_the_default_configs(self):
        self.assertEqual(build_env_config(RunSettings()), EnvConfig())
        self.assertEqual(build_agent_config(RunSettings()), AgentConfig())

    def test_built_config_follows_the_settings(self):
        s = replace(RunSettings(), k_min=-0.2, k_max=0.2, k_points=5, tau_cvar=1e-2, use_cvar=False)
        cfg = build_env_config(s)
        self.assertEqual(cfg.k_grid, (-0.2, -0.1, 0.0, 0.1, 0.2))
        self.assertEqual(cfg.cvar.tau_cvar, 1e-2)
        self.assertFalse(cfg.use_cvar)


class SerializerTests(SimpleTestCase):
    def test_empty_input_gives_defaults(self):
        serializer = RunSettingsSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), RunSettings())

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_settings({'episodes': 2, 'learning_rate': 0.1})
        self.assertIn('learning_rate', ctx.exception.errors)
        self.assertIn('Clave desconocida', str(ctx.exception))

    def test_range_errors(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_settings({'episodes': 0, 'tail_fraction': 1.5})
        self.assertIn('episodes', ctx.exception.errors)
        self.assertIn('tail_fraction', ctx.exception.errors)

    def test_cross_field_errors(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_settings({'k_min': 0.1, 'psi_scale_min': 1.2, 'psi_scale_max': 1.5})
        self.assertIn('k_min', ctx.exception.errors)
        self.assertIn('psi_scale_min', ctx.exception.errors)

    def test_maturities_must_increase(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_settings({'maturities': [0.5, 0.25]})
        self.assertIn('maturities', ctx.exception.errors)

    def test_optional_fields_accept_null(self):
        s = validate_settings({'price_noise_std': None, 'n_scenarios_start': 16, 'n_scenarios': 32})
        self.assertIsNone(s.price_noise_std)
        self.assertEqual(s.n_scenarios_start, 16)


class LoadSettingsTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = self.dir / 'settings.json'
        path.write_text(text, encoding='utf-8')
        return path

    def test_file_and_overrides(self):
        path = self.write('{\n  "seed": 7,\n  "episodes": 3\n}\n')
        s = load_settings(path, ['episodes=5', 'maturities=[0.1, 0.2]', 'out_dir=runs/a'])
        self.assertEqual(s.seed, 7)
        self.assertEqual(s.episodes, 5)
        self.assertEqual(s.maturities, (0.1, 0.2))
        self.assertEqual(s.out_dir, 'runs/a')

    def test_written_settings_reload_identically(self):
        original = replace(RunSettings(), seed=11, episodes=2, price_noise_std=0.01)
        self.assertEqual(load_settings(self.write(original.to_json())), original)

    def test_field_error_names_the_line(self):
        path = self.write('{\n  "seed": 1,\n  "episodes": 0\n}\n')
        with self.assertRaises(ConfigError) as ctx:
            load_settings(path)
        self.assertIn(f'{path}:3: episodes', str(ctx.exception))

    def test_invalid_json_names_line_and_column(self):
        path = self.write('{\n  "seed": 1,\n  "episodes": \n}\n')
        with self.assertRaises(ConfigError) as ctx:
            load_settings(path)
        self.assertTrue(str(ctx.exception).startswith(f'{path}:4:1:'))

    def test_top_level_must_be_an_object(self):
        with self.assertRaises(ConfigError):
            load_settings(self.write('[1, 2]'))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_settings(self.dir / 'nope.json')

    def test_bad_override_is_reported_as_such(self):
        with self.assertRaises(ConfigError) as ctx:
            load_settings(overrides=['episodes=0'])
        self.assertIn('--set episodes', str(ctx.exception))

    def test_parse_override(self):
        self.assertEqual(parse_override('gamma=0.5'), ('gamma', 0.5))
        self.assertEqual(parse_override('use_cvar=false'), ('use_cvar', False))
        self.assertEqual(parse_override('out_dir=runs/x'), ('out_dir', 'runs/x'))
        with self.assertRaises(ConfigError):
            parse_override('gamma')
