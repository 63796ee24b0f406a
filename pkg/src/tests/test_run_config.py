import tempfile
import unittest
from pathlib import Path

import yaml

from src.association.gating import GateConfig
from src.baselines.cbtr import CbtrConfig
from src.baselines.kalman import KalmanConfig
from src.config.run_config import DEFAULTS, RunConfig, deep_merge, parse_override, seed_flags
from src.errors import ConfigurationError

REPO_CONFIG = Path(__file__).resolve().parents[2] / 'config' / 'config.yaml'


class TestRunConfig(unittest.TestCase):

    def test_defaults_validate(self):
        config = RunConfig().config
        self.assertEqual(config, DEFAULTS)
        self.assertEqual(GateConfig.from_config(config['gating']), GateConfig())

    def test_shipped_file_matches_defaults(self):
        self.assertEqual(RunConfig(REPO_CONFIG).config, DEFAULTS)

    def test_file_then_overrides_then_flags(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'run.yaml'
            path.write_text(yaml.safe_dump({'screening': {'k': 8}, 'runtime': {'seed': 1}}))
            cfg = RunConfig(path, ['screening.k=12', 'gating.theta_deg=80'], seed_flags(5))
        self.assertEqual(cfg.section('screening')['k'], 12)
        self.assertEqual(cfg.section('gating')['theta_deg'], 80)
        self.assertEqual(cfg.section('runtime')['seed'], 5)
        self.assertEqual(cfg.section('training')['seed'], 5)
        self.assertEqual(yaml.safe_load(cfg.dump())['screening']['k'], 12)

    def test_unknown_key_rejected(self):
        with self.assertRaises(ConfigurationError):
            RunConfig(overrides=['screening.kk=3'])

    def test_wrong_type_rejected(self):
        with self.assertRaises(ConfigurationError):
            RunConfig(overrides=['screening.k=many'])
        with self.assertRaises(ConfigurationError):
            RunConfig(overrides=['runtime.log_format=xml'])

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            RunConfig(Path('/nonexistent/run.yaml'))

    def test_parse_override(self):
        self.assertEqual(parse_override('baselines.cbtr.max_distance=5000'),
                         {'baselines': {'cbtr': {'max_distance': 5000}}})
        for bad in ('k=4', 'screening.k'):
            with self.assertRaises(ConfigurationError):
                parse_override(bad)

    def test_deep_merge_leaves_inputs_alone(self):
        base = {'a': {'b': 1, 'c': 2}}
        merged = deep_merge(base, {'a': {'b': 3}})
        self.assertEqual(merged, {'a': {'b': 3, 'c': 2}})
        self.assertEqual(base, {'a': {'b': 1, 'c': 2}})

    def test_nullable_baseline_values(self):
        config = RunConfig(overrides=['baselines.kalman.gate=9.49']).config
        self.assertEqual(KalmanConfig.from_config(config['baselines']['kalman']).gate, 9.49)
        self.assertEqual(CbtrConfig.from_config(DEFAULTS['baselines']['cbtr']).max_distance, float('inf'))


if __name__ == '__main__':
    unittest.main()
