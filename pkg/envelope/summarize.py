"""
Posterior summaries of a fitted envelope on a contrast-rotated basis.
"""
import logging
from typing import NamedTuple

import numpy as np

from .covreg import posterior_mean_covariance, psi_of_x
from .exceptions import ConfigError, DataError
from .models import EigenSample

logger = logging.getLogger(__name__)

SIGNAL_TOL = 1e-12


class Loading(NamedTuple):
    feature: int
    dim1: float
    dim2: float
    norm: float


class ContourRow(NamedTuple):
    label: str
    c11: float
    c12: float
    c22: float


def _covariate(x, q):
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != q:
        raise DataError(f"covariate vector has length {x.shape[0]}, expected q={q}")
    return x


def _check_dims(dims, s):
    dims = tuple(int(d) for d in dims)
    if len(dims) != 2 or dims[0] == dims[1] or not all(0 <= d < s for d in dims):
        raise ConfigError(f"dims must be two distinct column indices in [0, {s}), got {dims}")
    return dims


def _rotation(fit, V_tilde):
    """R with V_tilde = V_hat R."""
    if V_tilde.matrix.shape != fit.V_hat.matrix.shape:
        raise DataError("rotated basis does not match the fitted basis")
    return fit.V_hat.matrix.T @ V_tilde.matrix


def sign_convention(R):
    """Flip columns so each one's first nonzero entry is positive."""
    R = np.array(R, dtype=float)
    for j in range(R.shape[1]):
        nonzero = np.flatnonzero(np.abs(R[:, j]) > SIGNAL_TOL)
        if nonzero.size and R[nonzero[0], j] < 0:
            R[:, j] = -R[:, j]
    return R


def rotate_to_contrast(fit, x_a, x_b):
    """
    Rotate the fitted basis onto the eigenvectors of Psi_bar(x_a) - Psi_bar(x_b).

    Psi_bar is the posterior mean projected covariance; columns come out in
    descending order of the difference's eigenvalues.

    Returns:
        tuple: (V_tilde StiefelBasis, R s x s orthogonal)
    """
    if fit.samples.is_empty:
        raise DataError("fit has no posterior draws")
    q = fit.samples.draws[0].eta.shape[0]
    x_a = _covariate(x_a, q)
    x_b = _covariate(x_b, q)
    if np.array_equal(x_a, x_b):
        raise ConfigError("contrast needs two different covariate vectors")

    cov = posterior_mean_covariance(fit.samples, np.vstack([x_a, x_b]))
    difference = cov[0] - cov[1]
    if np.max(np.abs(difference)) <= SIGNAL_TOL * max(1.0, np.max(np.abs(cov))):
        raise DataError("contrast has no covariance signal")

    values, vectors = np.linalg.eigh(difference)
    order = np.argsort(-values, kind='stable')
    R = sign_convention(vectors[:, order])
    logger.debug(f"contrast eigenvalues: {np.round(values[order], 6).tolist()}")
    return fit.V_hat.rotate(R), R


def wrap_angle(theta):
    """Map an axis orientation onto [-pi/2, pi/2)."""
    return float(np.mod(theta + np.pi / 2, np.pi) - np.pi / 2)


def leading_axis(matrix):
    """(largest eigenvalue, orientation of its eigenvector) of a symmetric 2 x 2 matrix."""
    values, vectors = np.linalg.eigh(matrix)
    vector = vectors[:, -1]
    return float(values[-1]), wrap_angle(np.arctan2(vector[1], vector[0]))


def eigen_summary(fit, V_tilde, x, dims):
    """
    Largest eigenvalue and principal-axis angle of R^T Psi(x) R restricted to
    ``dims``, one EigenSample per posterior draw.
    """
    if fit.samples.is_empty:
        raise DataError("fit has no posterior draws")
    R = _rotation(fit, V_tilde)
    dims = _check_dims(dims, fit.s)
    x = _covariate(x, fit.samples.draws[0].eta.shape[0])
    block = np.ix_(dims, dims)

    samples = []
    for index, draw in enumerate(fit.samples.draws):
        rotated = R.T @ psi_of_x(draw.B, draw.A, x) @ R
        lambda1, angle = leading_axis(rotated[block])
        samples.append(EigenSample(draw=index, lambda1=lambda1, angle=angle))
    return samples


def biplot_loadings(fit, V_tilde, dims, top_m):
    """
    Rows of V_tilde on ``dims`` with the largest Euclidean norms.

    Ties go to the lower feature index.
    """
    dims = _check_dims(dims, fit.s)
    p = V_tilde.p
    if not 1 <= top_m <= p:
        raise ConfigError(f"top_m must lie in [1, p={p}], got {top_m}")
    loadings = V_tilde.matrix[:, dims]
    norms = np.linalg.norm(loadings, axis=1)
    order = np.lexsort((np.arange(p), -norms))[:top_m]
    return [Loading(int(j), float(loadings[j, 0]), float(loadings[j, 1]), float(norms[j])) for j in order]


def contour_rows(fit, V_tilde, points, dims):
    """
    Posterior mean 2 x 2 covariance on ``dims`` for each labelled covariate vector.

    Args:
        points: list of (label, x) pairs
    """
    if fit.samples.is_empty:
        raise DataError("fit has no posterior draws")
    R = _rotation(fit, V_tilde)
    dims = _check_dims(dims, fit.s)
    q = fit.samples.draws[0].eta.shape[0]
    X = np.vstack([_covariate(x, q) for _, x in points])
    covariances = posterior_mean_covariance(fit.samples, X)
    rows = []
    for (label, _), cov in zip(points, covariances):
        block = (R.T @ cov @ R)[np.ix_(dims, dims)]
        rows.append(ContourRow(str(label), float(block[0, 0]), float(block[0, 1]), float(block[1, 1])))
    return rows
