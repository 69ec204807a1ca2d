"""
Fit the envelope basis by Monte Carlo EM; writes fit.json and samples.json.
"""
from pathlib import Path

from envelope.exceptions import DataError
from envelope.forms import FitForm
from envelope.management.base import EnvelopeCommand
from envelope.mcem import fit
from envelope.services import read_matrix, save_fit

FIT_SECTIONS = ('fit', 'mcmc', 'optimizer', 'priors', 'covreg')


class Command(EnvelopeCommand):
    help = 'Estimate the envelope and the projected covariance regression posterior'
    sections = FIT_SECTIONS
    form_class = FitForm

    def add_command_arguments(self, parser):
        parser.add_argument('--y', required=True, help='Response CSV')
        parser.add_argument('--x', help='Covariate CSV (omit for no covariates)')
        parser.add_argument('--out', required=True, help='Output directory for fit.json and samples.json')
        parser.add_argument('--s', type=int, help='Envelope dimension (0 selects it from the data)')
        parser.add_argument('--K', type=int, help='Covariance regression rank terms')
        parser.add_argument('--em-max-iters', type=int, help='EM iteration cap')
        parser.add_argument('--em-tol', type=float, help='Projector-distance convergence threshold')
        parser.add_argument('--objective', help='M-step objective: spiked or inverse_wishart')
        parser.add_argument('--n-iter', type=int, help='Sweeps of the first E-step chain')
        parser.add_argument('--burn', type=int, help='Burn-in of the first E-step chain')
        parser.add_argument('--thin', type=int, help='Thinning interval')
        parser.add_argument('--chains', type=int, help='Independent chains per E-step')
        parser.add_argument('--warm-n-iter', type=int, help='Sweeps of warm-started E-step chains')
        parser.add_argument('--warm-burn', type=int, help='Burn-in of warm-started E-step chains')
        parser.add_argument('--max-iters', type=int, help='Stiefel search iteration cap per M-step')

    def run(self, options):
        cfg = self.resolve(options).fit_config()
        Y, _ = read_matrix(options['y'], 'Y.csv')
        X = None
        if options.get('x'):
            X, _ = read_matrix(options['x'], 'X.csv')
            if X.shape[0] != Y.shape[0]:
                raise DataError(f'Y.csv has {Y.shape[0]} rows but X.csv has {X.shape[0]}')

        result = fit(Y, X, cfg)
        path = save_fit(result, Path(options['out']))
        status = 'converged' if result.converged else 'not converged'
        self.success(
            f'Fitted s={result.s} envelope in {result.iterations} EM iteration(s), {status}; '
            f'sigma2_hat={result.sigma2_hat:.4g}; wrote {path}'
        )
