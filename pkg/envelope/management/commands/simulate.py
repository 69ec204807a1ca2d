"""
Simulate a data set: writes Y.csv, X.csv and the truth manifest truth.json.
"""
from pathlib import Path

from envelope.evaluation import simulate
from envelope.forms import SimulateForm
from envelope.management.base import EnvelopeCommand
from envelope.services import save_truth, write_matrix


class Command(EnvelopeCommand):
    help = 'Simulate responses from the envelope covariance regression model'
    sections = ('simulate',)
    form_class = SimulateForm

    def add_command_arguments(self, parser):
        parser.add_argument('--n', type=int, help='Observations')
        parser.add_argument('--p', type=int, help='Response dimension')
        parser.add_argument('--s', type=int, help='Envelope dimension')
        parser.add_argument('--q', type=int, help='Covariates')
        parser.add_argument('--tau', type=float, help='Scale of the mean coefficients')
        parser.add_argument('--sigma2', type=float, help='Noise variance')
        parser.add_argument('--K', type=int, help='Covariance rank terms (default q)')
        parser.add_argument('--out', required=True, help='Output directory')

    def run(self, options):
        cfg = self.resolve(options).simulation_config()
        Y, X, truth = simulate(cfg)

        out = Path(options['out'])
        write_matrix(out / 'Y.csv', Y, 'y')
        write_matrix(out / 'X.csv', X, 'x')
        save_truth(cfg, truth, out)
        self.success(f'Simulated {cfg.n} x {cfg.p} responses (s={cfg.s}, q={cfg.q}) into {out}')
