"""
Posterior summaries on a contrast-rotated basis: eigensamples.csv,
loadings.csv and contours.csv.
"""
from pathlib import Path

from envelope.forms import SummarizeForm
from envelope.management.base import EnvelopeCommand
from envelope.reports import ReportGenerator
from envelope.services import load_fit
from envelope.summarize import biplot_loadings, contour_rows, eigen_summary, rotate_to_contrast


class Command(EnvelopeCommand):
    help = 'Summarize a fit on the basis rotated to a covariate contrast'
    sections = ('summarize',)
    form_class = SummarizeForm

    def add_command_arguments(self, parser):
        parser.add_argument('--fit', required=True, help='fit.json (or the directory holding it)')
        parser.add_argument('--contrast', required=True, help='"xa_1,...,xa_q;xb_1,...,xb_q"')
        parser.add_argument(
            '--at', action='append',
            help='Labelled evaluation point "label=x_1,...,x_q"; repeatable (default: the contrast pair)',
        )
        parser.add_argument('--dims', help='Two rotated columns to summarize, e.g. "0,1"')
        parser.add_argument('--top-m', type=int, help='Number of loadings to export')
        parser.add_argument('--out', required=True, help='Output directory')

    def run(self, options):
        form = self.resolve(options)
        fit = load_fit(options['fit'])
        x_a, x_b = form.cleaned_data['contrast']
        dims = form.cleaned_data['dims']
        points = form.cleaned_data['at'] or [('a', x_a), ('b', x_b)]

        V_tilde, _ = rotate_to_contrast(fit, x_a, x_b)
        labelled = [(label, eigen_summary(fit, V_tilde, x, dims)) for label, x in points]
        loadings = biplot_loadings(fit, V_tilde, dims, min(form.cleaned_data['top_m'], fit.p))
        contours = contour_rows(fit, V_tilde, points, dims)

        report = ReportGenerator(Path(options['out']))
        report.summary_report(labelled, loadings, contours)
        self.success(f'Summarized {len(fit.samples)} draws at {len(points)} point(s) into {report.out_dir}')
