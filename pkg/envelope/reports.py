"""
CSV result tables for the eval and summarize commands
"""
import logging
from pathlib import Path

import pandas as pd

from .services import write_table

logger = logging.getLogger(__name__)

EXPERIMENT_COLUMNS = ['experiment', 'param', 'mean_pct_increase', 'ci_lo', 'ci_hi', 'M']
LOSS_COLUMNS = ['observation', 'loss']
EIGEN_COLUMNS = ['draw', 'lambda1', 'angle', 'label']
LOADING_COLUMNS = ['feature', 'dim1', 'dim2', 'norm']
CONTOUR_COLUMNS = ['label', 'c11', 'c12', 'c22']


class ReportGenerator:
    """Build result tables and write them under one output directory"""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.written = []

    def write(self, filename, frame):
        path = write_table(self.out_dir / filename, frame)
        self.written.append(path)
        return path

    @staticmethod
    def experiment_table(rows):
        """One row per setting; the bootstrap standard error is not part of the file."""
        return pd.DataFrame(
            [[r.experiment, r.param, r.mean_pct_increase, r.ci_lo, r.ci_hi, r.M] for r in rows],
            columns=EXPERIMENT_COLUMNS,
        )

    @staticmethod
    def loss_table(losses):
        return pd.DataFrame(
            {'observation': range(len(losses)), 'loss': list(losses)},
            columns=LOSS_COLUMNS,
        )

    @staticmethod
    def eigen_table(labelled_samples):
        """
        Args:
            labelled_samples: list of (label, list of EigenSample)
        """
        records = [
            [sample.draw, sample.lambda1, sample.angle, label]
            for label, samples in labelled_samples
            for sample in samples
        ]
        return pd.DataFrame(records, columns=EIGEN_COLUMNS)

    @staticmethod
    def loading_table(loadings):
        return pd.DataFrame([list(l) for l in loadings], columns=LOADING_COLUMNS)

    @staticmethod
    def contour_table(rows):
        return pd.DataFrame([list(r) for r in rows], columns=CONTOUR_COLUMNS)

    def experiment_report(self, rows, filename):
        return self.write(filename, self.experiment_table(rows))

    def loss_report(self, losses, filename='losses.csv'):
        return self.write(filename, self.loss_table(losses))

    def summary_report(self, labelled_samples, loadings, contours):
        """eigensamples.csv, loadings.csv and contours.csv"""
        paths = [
            self.write('eigensamples.csv', self.eigen_table(labelled_samples)),
            self.write('loadings.csv', self.loading_table(loadings)),
            self.write('contours.csv', self.contour_table(contours)),
        ]
        logger.info(f"summary tables written to {self.out_dir}")
        return paths
