"""
Evaluation: the dimension-misspecification and two-stage experiments, or
per-observation Stein's losses of a fit against a truth manifest.
"""
from pathlib import Path

import numpy as np

from envelope.evaluation import misspecification_experiment, observation_losses, two_stage_experiment
from envelope.exceptions import DataError
from envelope.forms import EvalForm
from envelope.management.base import EnvelopeCommand
from envelope.management.commands.fit import FIT_SECTIONS
from envelope.reports import ReportGenerator
from envelope.services import load_fit, load_truth, read_matrix


class Command(EnvelopeCommand):
    help = "Run a simulation experiment or score a fit with Stein's loss"
    # simulate comes after the fit sections so its s and seed win
    sections = FIT_SECTIONS + ('simulate', 'experiment')
    form_class = EvalForm

    def add_command_arguments(self, parser):
        parser.add_argument('--experiment', choices=EvalForm.EXPERIMENTS,
                            help='misspecification, two_stage, or losses (implied by --truth)')
        parser.add_argument('--out', required=True, help='Output directory')
        parser.add_argument('--truth', help='truth.json from the simulate command')
        parser.add_argument('--fit', help='fit.json to score against --truth')
        parser.add_argument('--x', help='Covariate CSV matching the truth manifest')
        parser.add_argument('--s-tilde', help='Fitted dimensions, e.g. "4,8,12"; must include s')
        parser.add_argument('--q-list', help='Covariate counts for the two-stage experiment, e.g. "4"')
        parser.add_argument('--replicates', type=int, help='Simulated data sets per setting')
        parser.add_argument('--bootstrap-resamples', type=int, help='Bootstrap resamples for the intervals')
        parser.add_argument('--allow-full', action='store_const', const=True,
                            help='Permit s_tilde = p (covariance regression on the raw responses)')
        parser.add_argument('--n', type=int)
        parser.add_argument('--p', type=int)
        parser.add_argument('--s', type=int)
        parser.add_argument('--q', type=int)
        parser.add_argument('--tau', type=float)
        parser.add_argument('--sigma2', type=float)
        parser.add_argument('--K', type=int, help='Covariance regression rank terms of the fits')
        parser.add_argument('--em-max-iters', type=int)
        parser.add_argument('--n-iter', type=int)
        parser.add_argument('--burn', type=int)
        parser.add_argument('--warm-n-iter', type=int)
        parser.add_argument('--warm-burn', type=int)

    def run(self, options):
        experiment = options.get('experiment') or ('losses' if options.get('truth') else None)
        form = self.resolve(options, experiment=experiment)
        report = ReportGenerator(Path(options['out']))
        if form.cleaned_data['experiment'] == 'losses':
            return self.score(options, report)

        data = form.cleaned_data
        base = form.simulation_config()
        fit_cfg = form.fit_config(s=base.s)
        common = dict(
            fit_cfg=fit_cfg,
            bootstrap=data['bootstrap_resamples'],
            threads=data['threads'],
            progress=options['verbosity'] >= 1,
        )
        if data['experiment'] == 'misspecification':
            rows = misspecification_experiment(
                base, data['s_tilde'], data['replicates'], base.seed,
                allow_full=bool(data['allow_full']), **common,
            )
        else:
            rows = two_stage_experiment(base, data['q_list'], data['replicates'], base.seed, **common)

        path = report.experiment_report(rows, f"{data['experiment']}.csv")
        for row in rows:
            self.stdout.write(
                f'{row.experiment} param={row.param}: {row.mean_pct_increase:.3f}% '
                f'[{row.ci_lo:.3f}, {row.ci_hi:.3f}] over M={row.M}'
            )
        self.success(f'Wrote {path}')

    def score(self, options, report):
        missing = [flag for flag in ('truth', 'fit', 'x') if not options.get(flag)]
        if missing:
            raise DataError(f"scoring needs --{', --'.join(missing)}")
        config, truth = load_truth(options['truth'])
        fit = load_fit(options['fit'])
        X, _ = read_matrix(options['x'], 'X.csv')
        if fit.p != config.p or X.shape[1] != config.q:
            raise DataError(
                f'fit (p={fit.p}) and covariates (q={X.shape[1]}) do not match the truth manifest '
                f'(p={config.p}, q={config.q})'
            )
        if fit.samples.draws and fit.samples.draws[0].eta.shape[0] != X.shape[1]:
            raise DataError(f'fit was made with q={fit.samples.draws[0].eta.shape[0]} covariates, X.csv has {X.shape[1]}')

        losses = observation_losses(fit, X, truth)
        path = report.loss_report(losses)
        self.stdout.write(f"mean Stein's loss {float(np.mean(losses)):.6g} over {len(losses)} observation(s)")
        self.success(f'Wrote {path}')
