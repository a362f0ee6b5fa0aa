#!/usr/bin/env python3
"""
Test suite for the command-line front end.

Runs every subcommand in-process on a shrunken scenario and checks exit
codes, output files and their contents.
"""

import io
import json
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path

import pandas as pd

from scenario_config import load_scenario, scenario_from_dict
from sim_cli import load_alpha, main


SMALL = ['--set', 'timing.horizon=1.0', '--set', 'filter.n_particles=40',
         '--set', 'training.iterations=2', '--set', 'training.batch=2',
         '--set', 'training.baseline_batch=2']


def run_cli(*argv):
    """Run the CLI quietly; returns (exit code, captured stdout)."""
    buffer = io.StringIO()
    with redirect_stdout(buffer):
        rc = main(list(argv))
    return rc, buffer.getvalue()


class CLITestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def out(self, name):
        return str(self.tmp / name)


class TestTrain(CLITestCase):
    """train subcommand"""

    def test_outputs(self):
        rc, text = run_cli('train', '--out', self.out('run'), *SMALL)
        self.assertEqual(rc, 0, text)
        curve = pd.read_csv(self.tmp / 'run' / 'learning_curve.csv')
        self.assertEqual(len(curve), 2)
        self.assertEqual(curve['episodes'].tolist(), [2, 2])
        for column in ('k', 'eta_k', 'episodes', 'mean_return', 'return_stderr', 'grad_norm', 'alpha_3'):
            self.assertIn(column, curve.columns)
        alpha = json.loads((self.tmp / 'run' / 'alpha_final.json').read_text())
        self.assertEqual(len(alpha['alpha']), 4)
        self.assertEqual(alpha['iterate_index'], 2)
        print("✅ train wrote learning_curve.csv and alpha_final.json")

    def test_reproducible(self):
        run_cli('train', '--out', self.out('a'), '--seed', '7', *SMALL)
        run_cli('train', '--out', self.out('b'), '--seed', '7', *SMALL)
        for name in ('learning_curve.csv', 'alpha_final.json'):
            self.assertEqual((self.tmp / 'a' / name).read_text(), (self.tmp / 'b' / name).read_text())

    def test_manifest(self):
        run_cli('train', '--out', self.out('run'), '--seed', '3', *SMALL)
        manifest = json.loads((self.tmp / 'run' / 'manifest.json').read_text())
        self.assertEqual(manifest['command'], 'train')
        self.assertEqual(manifest['seed'], 3)
        self.assertIn('learning_curve.csv', manifest['outputs'])
        self.assertGreater(manifest['peak_ram_mb'], 0)
        expected = load_scenario(None, SMALL[1::2] + ['seed=3'])
        self.assertEqual(scenario_from_dict(manifest['config']), expected)


class TestSimulate(CLITestCase):
    """simulate subcommand"""

    def test_tables(self):
        rc, text = run_cli('simulate', '--out', self.out('sim'), *SMALL)
        self.assertEqual(rc, 0, text)
        trajectory = pd.read_csv(self.tmp / 'sim' / 'trajectory.csv')
        self.assertEqual(len(trajectory), 21)
        self.assertEqual(list(trajectory.columns[:5]), ['t', 'x0_rx', 'x0_ry', 'x0_vx', 'x0_vy'])
        self.assertEqual(trajectory.columns[-1], 'reward')
        actions = pd.read_csv(self.tmp / 'sim' / 'actions.csv')
        self.assertGreater(len(actions), 0)
        self.assertTrue(actions['delta'].between(0.01, 0.5).all())
        self.assertTrue(actions['theta'].abs().lt(1.5707963267948966).all())

    def test_strong_radar_never_misses(self):
        rc, _ = run_cli('simulate', '--out', self.out('sim'), '--set', 'radar.kappa=1e60', *SMALL)
        self.assertEqual(rc, 0)
        actions = pd.read_csv(self.tmp / 'sim' / 'actions.csv')
        self.assertTrue((actions['detect_0'] == 1).all())
        self.assertTrue((actions['detect_1'] == 1).all())
        self.assertFalse(actions['r_0'].isna().any())

    def test_alpha_file(self):
        good = self.tmp / 'alpha.json'
        good.write_text(json.dumps({'alpha': [1.0, 0.5, -1.0, 0.0]}))
        self.assertEqual(load_alpha(good, 4), (1.0, 0.5, -1.0, 0.0))
        rc, _ = run_cli('simulate', '--out', self.out('sim'), '--alpha', str(good), *SMALL)
        self.assertEqual(rc, 0)

        bad = self.tmp / 'short.json'
        bad.write_text(json.dumps([1.0, 2.0]))
        rc, text = run_cli('simulate', '--out', self.out('bad'), '--alpha', str(bad), *SMALL)
        self.assertEqual(rc, 1)
        self.assertIn('components', text)
        self.assertFalse((self.tmp / 'bad' / 'trajectory.csv').exists())


class TestEvaluate(CLITestCase):
    """evaluate subcommand"""

    def test_single_episode(self):
        rc, _ = run_cli('evaluate', '--out', self.out('ev'), '--episodes', '1', *SMALL)
        self.assertEqual(rc, 0)
        result = json.loads((self.tmp / 'ev' / 'eval.json').read_text())
        self.assertIsNone(result['return_stderr'])
        self.assertEqual(result['episodes'], 1)
        self.assertEqual(len(result['rms_error']), 2)
        self.assertEqual(len(result['mean_dwell']), 2)

    def test_episode_count(self):
        rc, _ = run_cli('evaluate', '--out', self.out('ev'), '--episodes', '0', *SMALL)
        self.assertEqual(rc, 1)
        self.assertFalse((self.tmp / 'ev' / 'eval.json').exists())


class TestGradcheck(CLITestCase):
    """gradcheck subcommand"""

    def test_epsilon_must_be_positive(self):
        rc, _ = run_cli('gradcheck', '--out', self.out('gc'), '--epsilon', '0', *SMALL)
        self.assertEqual(rc, 1)
        self.assertFalse((self.tmp / 'gc' / 'gradcheck.json').exists())

    def test_report(self):
        rc, text = run_cli('gradcheck', '--out', self.out('gc'), '--episodes', '3', '--seeds', '30',
                           '--set', 'timing.horizon=0.5', '--set', 'filter.n_particles=20')
        self.assertIn(rc, (0, 1), text)
        report = json.loads((self.tmp / 'gc' / 'gradcheck.json').read_text())
        self.assertEqual(len(report['ipa_mean']), 4)
        self.assertEqual(len(report['fd_mean']), 4)
        self.assertIn(report['status'], ('pass', 'fail', 'both-zero: pass', 'one-zero: fail'))
        self.assertEqual(rc == 0, report['status'].endswith('pass'))
        self.assertTrue((self.tmp / 'gc' / 'manifest.json').exists())


class TestErrors(CLITestCase):
    """Exit codes for bad input"""

    def test_missing_config(self):
        rc, text = run_cli('simulate', '--out', self.out('x'), '--config', str(self.tmp / 'nope.json'))
        self.assertEqual(rc, 1)
        self.assertIn('not found', text)
        self.assertIn('nope.json', text)

    def test_unknown_override(self):
        rc, text = run_cli('simulate', '--out', self.out('x'), '--set', 'radar.colour=3')
        self.assertEqual(rc, 1)
        self.assertIn('radar.colour', text)

    def test_config_file(self):
        path = self.tmp / 'scenario.json'
        path.write_text(json.dumps({'seed': 99, 'timing': {'horizon': 0.5}, 'filter': {'n_particles': 30}}))
        rc, _ = run_cli('simulate', '--out', self.out('sim'), '--config', str(path))
        self.assertEqual(rc, 0)
        manifest = json.loads((self.tmp / 'sim' / 'manifest.json').read_text())
        self.assertEqual(manifest['seed'], 99)
        self.assertEqual(len(pd.read_csv(self.tmp / 'sim' / 'trajectory.csv')), 11)


def run_tests():
    """Run all tests"""
    print("=" * 80)
    print("SIM CLI - TEST SUITE")
    print("=" * 80 + "\n")

    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestTrain, TestSimulate, TestEvaluate, TestGradcheck, TestErrors):
        suite.addTests(loader.loadTestsFromTestCase(case))

    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)

    print("\n" + "=" * 80)
    print("TEST SUMMARY")
    print("=" * 80)
    print(f"Tests run: {result.testsRun}")
    print(f"Successes: {result.testsRun - len(result.failures) - len(result.errors)}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")

    if result.wasSuccessful():
        print("\n✅ ALL TESTS PASSED")
        return 0
    else:
        print("\n❌ SOME TESTS FAILED")
        return 1


if __name__ == "__main__":
    exit(run_tests())
