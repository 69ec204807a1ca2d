"""
Print the envelope dimension selected by singular value thresholding.
"""
from envelope.exceptions import DataError
from envelope.management.base import EnvelopeCommand
from envelope.mcem import select_rank
from envelope.services import read_matrix


class Command(EnvelopeCommand):
    help = 'Select the envelope dimension of a response matrix (column-centered)'

    def add_command_arguments(self, parser):
        parser.add_argument('--y', required=True, help='Response CSV (header row, one observation per row)')

    def run(self, options):
        Y, _ = read_matrix(options['y'], 'Y.csv')
        if 0 in Y.shape:
            raise DataError('Y.csv holds no data')
        self.stdout.write(str(select_rank(Y - Y.mean(axis=0))))
