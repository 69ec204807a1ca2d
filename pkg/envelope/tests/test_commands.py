import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from envelope.models import FitConfig
from envelope.services import load_fit, load_truth, save_fit, write_matrix

from .helpers import make_draw, make_fit

SMALL_SIM = ['--n', '30', '--p', '5', '--s', '2', '--q', '1', '--seed', '3']
SMALL_MCMC = ['--n-iter', '20', '--burn', '10', '--warm-n-iter', '10', '--warm-burn', '5']


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def call(self, name, *args):
        out = StringIO()
        call_command(name, *[str(a) for a in args], stdout=out, verbosity=0)
        return out.getvalue()

    def assertExitCode(self, code, name, *args):
        with self.assertRaises(CommandError) as ctx:
            self.call(name, *args)
        self.assertEqual(ctx.exception.returncode, code)
        return ctx.exception

    def simulate(self, name='data', *extra):
        out = self.tmp / name
        self.call('simulate', *SMALL_SIM, *extra, '--out', out)
        return out

    def fit(self, data, name='fit', *extra):
        out = self.tmp / name
        self.call(
            'fit', '--y', data / 'Y.csv', '--x', data / 'X.csv', '--out', out,
            '--s', '2', '--K', '1', '--em-max-iters', '0', *SMALL_MCMC, *extra,
        )
        return out


class SimulateCommandTests(CommandTestCase):
    def test_writes_data_and_truth(self):
        out = self.simulate()
        Y = pd.read_csv(out / 'Y.csv')
        X = pd.read_csv(out / 'X.csv')
        self.assertEqual(Y.shape, (30, 5))
        self.assertEqual(list(X.columns), ['x1'])
        config, truth = load_truth(out / 'truth.json')
        self.assertEqual((config.n, config.p, config.s, config.q), (30, 5, 2, 1))
        self.assertEqual(truth.V.matrix.shape, (5, 2))

    def test_repeatable(self):
        first = self.simulate('first')
        second = self.simulate('second')
        for name in ('Y.csv', 'X.csv', 'truth.json'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_dimension_must_be_below_p(self):
        error = self.assertExitCode(2, 'simulate', '--p', '5', '--s', '5', '--out', self.tmp)
        self.assertIn('s must be < p', str(error))

    def test_config_file_sits_between_defaults_and_flags(self):
        config = self.tmp / 'run.yaml'
        config.write_text('simulate:\n  n: 15\n  p: 4\n  s: 1\n  q: 2\n', encoding='utf-8')
        self.call('simulate', '--config', config, '--out', self.tmp / 'from_file')
        self.assertEqual(pd.read_csv(self.tmp / 'from_file' / 'Y.csv').shape, (15, 4))
        self.call('simulate', '--config', config, '--n', '12', '--out', self.tmp / 'flag')
        self.assertEqual(pd.read_csv(self.tmp / 'flag' / 'Y.csv').shape, (12, 4))

    def test_unknown_config_section(self):
        config = self.tmp / 'run.yaml'
        config.write_text('simulation:\n  n: 15\n', encoding='utf-8')
        self.assertExitCode(2, 'simulate', '--config', config, '--out', self.tmp)

    def test_unknown_config_key(self):
        config = self.tmp / 'run.yaml'
        config.write_text('simulate:\n  rows: 15\n', encoding='utf-8')
        self.assertExitCode(2, 'simulate', '--config', config, '--out', self.tmp)


class RankCommandTests(CommandTestCase):
    def test_zero_matrix(self):
        write_matrix(self.tmp / 'Y.csv', np.zeros((10, 4)), 'y')
        self.assertEqual(self.call('rank', '--y', self.tmp / 'Y.csv').strip(), '0')

    def test_planted_rank(self):
        rng = np.random.default_rng(90)
        U = np.linalg.qr(rng.standard_normal((100, 2)))[0]
        W = np.linalg.qr(rng.standard_normal((20, 2)))[0]
        Y = U @ np.diag([50.0, 40.0]) @ W.T + 0.1 * rng.standard_normal((100, 20))
        write_matrix(self.tmp / 'Y.csv', Y, 'y')
        self.assertEqual(self.call('rank', '--y', self.tmp / 'Y.csv').strip(), '2')

    def test_malformed_csv(self):
        path = self.tmp / 'Y.csv'
        path.write_text('y1,y2\n1,2\nthree,4\n', encoding='utf-8')
        error = self.assertExitCode(3, 'rank', '--y', path)
        self.assertIn('row 2', str(error))

    def test_header_only(self):
        path = self.tmp / 'Y.csv'
        path.write_text('y1,y2\n', encoding='utf-8')
        self.assertExitCode(3, 'rank', '--y', path)


class FitCommandTests(CommandTestCase):
    def test_zero_iterations_writes_a_loadable_fit(self):
        out = self.fit(self.simulate())
        fit = load_fit(out)
        self.assertEqual((fit.p, fit.s), (5, 2))
        self.assertEqual(fit.iterations, 0)
        self.assertEqual(len(fit.samples), 10)
        self.assertEqual(fit.samples.draws[0].B.shape, (1, 2, 1))

    def test_repeatable(self):
        data = self.simulate()
        first = self.fit(data, 'first', '--em-max-iters', '1')
        second = self.fit(data, 'second', '--em-max-iters', '1')
        for name in ('fit.json', 'samples.json'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_reload_and_save_is_stable(self):
        out = self.fit(self.simulate())
        again = self.tmp / 'again'
        save_fit(load_fit(out), again)
        for name in ('fit.json', 'samples.json'):
            self.assertEqual((out / name).read_bytes(), (again / name).read_bytes())

    def test_row_mismatch(self):
        data = self.simulate()
        write_matrix(self.tmp / 'short.csv', np.ones((10, 1)), 'x')
        self.assertExitCode(
            3, 'fit', '--y', data / 'Y.csv', '--x', self.tmp / 'short.csv', '--out', self.tmp / 'fit', '--s', '2',
        )

    def test_burn_must_leave_draws(self):
        data = self.simulate()
        self.assertExitCode(
            2, 'fit', '--y', data / 'Y.csv', '--out', self.tmp / 'fit', '--n-iter', '10', '--burn', '10',
        )


class SummarizeCommandTests(CommandTestCase):
    def test_writes_the_three_tables(self):
        fit_dir = self.fit(self.simulate())
        out = self.tmp / 'summary'
        self.call('summarize', '--fit', fit_dir, '--contrast', '1;0', '--out', out)
        eigen = pd.read_csv(out / 'eigensamples.csv')
        self.assertEqual(len(eigen), 20)
        self.assertEqual(sorted(set(eigen['label'])), ['a', 'b'])
        self.assertEqual(len(pd.read_csv(out / 'loadings.csv')), 5)
        self.assertEqual(pd.read_csv(out / 'contours.csv')['label'].tolist(), ['a', 'b'])

    def test_labelled_points(self):
        fit_dir = self.fit(self.simulate())
        out = self.tmp / 'summary'
        self.call(
            'summarize', '--fit', fit_dir, '--contrast', '1;0', '--at', 'low=-1', '--at', 'high=2',
            '--top-m', '2', '--out', out,
        )
        self.assertEqual(pd.read_csv(out / 'contours.csv')['label'].tolist(), ['low', 'high'])
        self.assertEqual(len(pd.read_csv(out / 'loadings.csv')), 2)

    def test_bad_contrast(self):
        fit_dir = self.fit(self.simulate())
        self.assertExitCode(2, 'summarize', '--fit', fit_dir, '--contrast', '1,0', '--out', self.tmp / 's')

    def test_missing_fit(self):
        self.assertExitCode(3, 'summarize', '--fit', self.tmp / 'absent', '--contrast', '1;0', '--out', self.tmp / 's')


class EvalCommandTests(CommandTestCase):
    def test_fit_built_from_the_truth_scores_zero(self):
        data = self.simulate()
        config, truth = load_truth(data / 'truth.json')
        draw = make_draw(truth.sigma2 * np.eye(2), B=truth.Gamma, eta=truth.eta)
        fit = make_fit(truth.V, [draw], sigma2=truth.sigma2, config=FitConfig(s=2, K=config.rank_terms))
        save_fit(fit, self.tmp / 'fit')
        out = self.tmp / 'eval'
        self.call(
            'eval', '--truth', data / 'truth.json', '--fit', self.tmp / 'fit' / 'fit.json',
            '--x', data / 'X.csv', '--out', out,
        )
        losses = pd.read_csv(out / 'losses.csv')
        self.assertEqual(len(losses), 30)
        self.assertLess(losses['loss'].max(), 1e-8)

    def test_scoring_needs_all_inputs(self):
        data = self.simulate()
        self.assertExitCode(3, 'eval', '--truth', data / 'truth.json', '--out', self.tmp / 'eval')

    def test_misspecification_is_repeatable(self):
        args = [
            '--experiment', 'misspecification', '--s-tilde', '1,2', '--replicates', '2',
            '--bootstrap-resamples', '20', '--em-max-iters', '1', *SMALL_SIM, *SMALL_MCMC,
        ]
        output = self.call('eval', *args, '--out', self.tmp / 'first')
        self.call('eval', *args, '--out', self.tmp / 'second')
        first = (self.tmp / 'first' / 'misspecification.csv').read_bytes()
        self.assertEqual(first, (self.tmp / 'second' / 'misspecification.csv').read_bytes())
        frame = pd.read_csv(self.tmp / 'first' / 'misspecification.csv')
        self.assertEqual(frame['param'].tolist(), [1, 2])
        self.assertEqual(frame['mean_pct_increase'].tolist()[1], 0.0)
        self.assertIn('misspecification param=2', output)

    def test_two_stage_needs_q_list(self):
        self.assertExitCode(2, 'eval', '--experiment', 'two_stage', '--out', self.tmp / 'eval')

    def test_misspecification_needs_the_true_dimension(self):
        self.assertExitCode(
            2, 'eval', '--experiment', 'misspecification', '--s-tilde', '1,3', *SMALL_SIM,
            '--replicates', '1', '--out', self.tmp / 'eval',
        )
