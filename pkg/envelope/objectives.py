"""
Marginal log-likelihood objectives over the envelope basis V.

Each objective returns only its V-dependent terms; additive constants are
dropped. Exponents come from the conjugate inverse-Wishart and
inverse-Gamma normalizers:

    c0 = (n + nu0) / 2                 complement covariance
    c1 = (n - q + nu1) / 2             material covariance, flat mean prior
    c_r = n (p - s) / 2 + alpha        isotropic noise level
    c_k = (n_k + nu_k) / 2             per-group material covariance

Gradients are Euclidean (p x s); the Stiefel search projects them.
"""
import logging
from functools import partial
from typing import Callable, NamedTuple

import numpy as np

from .exceptions import ConfigError, DataError, NumericalError
from .models import PosteriorMoments, ProjectedParams, StiefelBasis
from .stiefel import as_matrix

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-8


# ========================================
# SHARED PIECES
# ========================================

def _check_data(Y, X, V):
    Y = np.asarray(Y, dtype=float)
    V = as_matrix(V)
    if Y.ndim != 2:
        raise DataError(f"Y must be n x p, got shape {Y.shape}")
    if V.ndim != 2 or V.shape[0] != Y.shape[1]:
        raise DataError(f"V shape {V.shape} does not match p = {Y.shape[1]}")
    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise DataError(f"X shape {X.shape} does not match n = {Y.shape[0]}")
    return Y, X, V


def _logdet(M, what):
    sign, value = np.linalg.slogdet(M)
    if sign <= 0 or not np.isfinite(value):
        raise NumericalError(f"{what} is not positive definite")
    return float(value)


def _full_scale(U, p, name):
    """Prior scale as a p x p matrix; scalar u means u * I_p."""
    if np.ndim(U) == 0:
        return float(U) * np.eye(p)
    U = np.asarray(U, dtype=float)
    if U.shape != (p, p):
        raise ConfigError(f"{name} must be a scalar or a {p} x {p} matrix for this objective")
    return U


def _projected_logdet(S, U, B, name):
    """
    log|B^T (S + U) B| and its gradient in B.

    U may be a scalar, a p x p matrix, or a matrix already in the projected
    dimension (added after projection).
    """
    p, d = B.shape
    if np.ndim(U) == 0 or np.shape(U) == (p, p):
        full = S + _full_scale(U, p, name)
        W = B.T @ full @ B
        value = _logdet(W, f"projected {name} scale matrix")
        gradient = 2.0 * full @ B @ np.linalg.inv(W)
        return value, gradient
    U = np.asarray(U, dtype=float)
    if U.shape != (d, d):
        raise ConfigError(f"{name} must be a scalar, a {p} x {p} or a {d} x {d} matrix")
    W = B.T @ S @ B + U
    value = _logdet(W, f"projected {name} scale matrix")
    gradient = 2.0 * S @ B @ np.linalg.inv(W)
    return value, gradient


def _identity_logdet(S, U, V, name):
    """
    log|V_perp^T (S + U) V_perp| through log|M| + log|V^T M^{-1} V|, with M = S + U.

    Valid for orthonormal V and any orthonormal completion; never forms V_perp.
    Returns the value and the gradient of the second term in V.
    """
    p = V.shape[0]
    M = S + _full_scale(U, p, name)
    M_inv_V = np.linalg.solve(M, V)
    W = V.T @ M_inv_V
    value = _logdet(M, f"{name} scale matrix") + _logdet(W, f"projected inverse {name} scale matrix")
    gradient = 2.0 * M_inv_V @ np.linalg.inv(W)
    return value, gradient


def _complement(V, Vperp):
    if Vperp is None:
        if isinstance(V, StiefelBasis):
            return V.complement().matrix
        p, s = V.shape
        if s >= p:
            raise ConfigError("the complement of a full basis is empty (s must be < p)")
        q, _ = np.linalg.qr(V, mode='complete')
        return q[:, s:]
    Vp = as_matrix(Vperp)
    return Vp


def _check_complement(V, Vp):
    p, s = V.shape
    if Vp.shape != (p, p - s):
        raise DataError(f"V_perp must be {p} x {p - s}, got shape {Vp.shape}")
    cross = np.max(np.abs(V.T @ Vp)) if Vp.size else 0.0
    if cross > ORTHOGONALITY_TOL:
        raise DataError(f"V_perp is not orthogonal to V (max |V^T V_perp| = {cross:.3e})")


def _moments(params):
    if isinstance(params, ProjectedParams):
        return PosteriorMoments.from_params(params)
    if isinstance(params, PosteriorMoments):
        return params
    raise DataError("expected ProjectedParams or PosteriorMoments")


def _check_moments(moments, n, s):
    if moments.M.shape != (n, s):
        raise DataError(f"moments are {moments.M.shape}, expected ({n}, {s})")


def _quadratic_term(Y, V, moments):
    """-1/2 sum_i [z_i K_i z_i^T - 2 M_i z_i^T] with z_i = y_i V."""
    Z = Y @ V
    zKz = np.einsum('ij,ijk,ik->i', Z, moments.K, Z)
    mz = np.einsum('ij,ij->i', moments.M, Z)
    return -0.5 * float(np.sum(zKz - 2.0 * mz))


def _quadratic_gradient(Y, V, moments):
    Z = Y @ V
    ZK = np.einsum('ij,ijk->ik', Z, moments.K)
    return -Y.T @ ZK + Y.T @ moments.M


def residual_energy(Y, V, kappa):
    """1/2 ||Y||_F^2 - 1/2 ||YV||_F^2 + kappa."""
    Y = np.asarray(Y, dtype=float)
    V = as_matrix(V)
    return 0.5 * float(np.sum(Y * Y)) - 0.5 * float(np.sum((Y @ V) ** 2)) + kappa


def _residual_term(Y, V, alpha, kappa):
    n, p = Y.shape
    s = V.shape[1]
    if s >= p:
        raise ConfigError(f"the noise term needs s < p, got s={s}, p={p}")
    if not kappa > 0 or not alpha > 0:
        raise ConfigError("alpha and kappa must be positive")
    c_r = n * (p - s) / 2.0 + alpha
    energy = residual_energy(Y, V, kappa)
    if energy <= 0:
        raise NumericalError("residual energy is not positive")
    return -c_r * np.log(energy), c_r * (Y.T @ (Y @ V)) / energy


# ========================================
# KNOWN PROJECTED PARAMETERS
# ========================================

def general_marginal_loglik(Y, X, V, params, U0, nu0, Vperp=None, use_identity=False):
    """
    Log-likelihood of V with the complement covariance integrated out.

    Args:
        Y: n x p responses
        X: n x q covariates (only checked for shape)
        V: p x s orthonormal basis
        params: ProjectedParams or PosteriorMoments
        U0: complement prior scale (scalar, p x p, or (p-s) x (p-s))
        nu0: complement prior degrees of freedom
        Vperp: orthonormal completion; computed by full QR when omitted
        use_identity: evaluate the complement determinant through V alone

    Returns:
        float
    """
    Y, X, V = _check_data(Y, X, V)
    n, p = Y.shape
    moments = _moments(params)
    _check_moments(moments, n, V.shape[1])
    c0 = (n + nu0) / 2.0
    S = Y.T @ Y

    if use_identity:
        logdet, _ = _identity_logdet(S, U0, V, 'U0')
    else:
        Vp = _complement(V, Vperp)
        _check_complement(V, Vp)
        logdet, _ = _projected_logdet(S, U0, Vp, 'U0')
    return _quadratic_term(Y, V, moments) - c0 * logdet


def general_marginal_gradient(Y, X, V, params, U0, nu0):
    """Euclidean gradient of general_marginal_loglik in its V-only form."""
    Y, X, V = _check_data(Y, X, V)
    moments = _moments(params)
    c0 = (Y.shape[0] + nu0) / 2.0
    _, grad_logdet = _identity_logdet(Y.T @ Y, U0, V, 'U0')
    return _quadratic_gradient(Y, V, moments) - c0 * grad_logdet


def spiked_marginal_loglik(Y, X, V, params, alpha, kappa):
    """Log-likelihood of V under isotropic noise off the envelope, sigma^2 integrated out."""
    Y, X, V = _check_data(Y, X, V)
    moments = _moments(params)
    _check_moments(moments, Y.shape[0], V.shape[1])
    residual, _ = _residual_term(Y, V, alpha, kappa)
    return _quadratic_term(Y, V, moments) + residual


def spiked_marginal_gradient(Y, X, V, params, alpha, kappa):
    Y, X, V = _check_data(Y, X, V)
    moments = _moments(params)
    _, residual_grad = _residual_term(Y, V, alpha, kappa)
    return _quadratic_gradient(Y, V, moments) + residual_grad


# ========================================
# M-STEP
# ========================================

def mstep_objective(Y, X, V, moments, alpha, kappa):
    """Spiked objective with E-step moments (M_i, K_i) in place of the known parameters."""
    return spiked_marginal_loglik(Y, X, V, moments, alpha, kappa)


def mstep_gradient(Y, X, V, moments, alpha, kappa):
    """-sum_i y_i^T y_i V K_i + sum_i y_i^T M_i + c_r Y^T Y V / D"""
    return spiked_marginal_gradient(Y, X, V, moments, alpha, kappa)


def mstep_general_objective(Y, X, V, moments, U0, nu0):
    """M-step with an inverse-Wishart complement covariance instead of sigma^2 I."""
    return general_marginal_loglik(Y, X, V, moments, U0, nu0, use_identity=True)


def mstep_general_gradient(Y, X, V, moments, U0, nu0):
    return general_marginal_gradient(Y, X, V, moments, U0, nu0)


# ========================================
# RESPONSE ENVELOPE
# ========================================

def response_envelope_coefficients(n, q, nu0, nu1, proper_mean_prior=False):
    """
    (c1, c2) multiplying the material and immaterial log-determinants.

    With a flat prior on the regression coefficients the material exponent
    loses q degrees of freedom; a proper normal prior keeps all n.
    """
    c1 = (n + nu1) / 2.0 if proper_mean_prior else (n - q + nu1) / 2.0
    c2 = (n + nu0) / 2.0
    return c1, c2


def regression_residual(Y, X, Lambda0):
    """
    Posterior regression residual scatter and coefficient mean.

    Returns:
        tuple: (A, B_n) with B_n = (X^T X + Lambda0)^{-1} X^T Y and
        A = (Y - X B_n)^T (Y - X B_n) + B_n^T Lambda0 B_n
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    q = X.shape[1]
    L = float(Lambda0) * np.eye(q) if np.ndim(Lambda0) == 0 else np.asarray(Lambda0, dtype=float)
    if L.shape != (q, q):
        raise ConfigError(f"Lambda0 must be a scalar or a {q} x {q} matrix")
    gram = X.T @ X + L
    try:
        factor = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        factor = None
    if factor is None or np.linalg.cond(gram) > 1e12:
        raise NumericalError("X^T X + Lambda0 is singular; choose Lambda0 > 0")
    B_n = np.linalg.solve(gram, X.T @ Y)
    R = Y - X @ B_n
    return R.T @ R + B_n.T @ L @ B_n, B_n


def response_envelope_loglik(Y, X, V, priors, Vperp=None, use_identity=False, proper_mean_prior=False):
    """
    Log-likelihood of V for the response envelope model, with the mean
    coefficients and both covariance blocks integrated out.
    """
    Y, X, V = _check_data(Y, X, V)
    if X is None:
        raise DataError("the response envelope needs covariates X")
    n, q = X.shape
    c1, c2 = response_envelope_coefficients(n, q, priors.nu0, priors.nu1, proper_mean_prior)
    A, _ = regression_residual(Y, X, priors.Lambda0)
    material, _ = _projected_logdet(A, priors.U1, V, 'U1')
    S = Y.T @ Y
    if use_identity:
        immaterial, _ = _identity_logdet(S, priors.U0, V, 'U0')
    else:
        Vp = _complement(V, Vperp)
        _check_complement(V, Vp)
        immaterial, _ = _projected_logdet(S, priors.U0, Vp, 'U0')
    return -c1 * material - c2 * immaterial


def response_envelope_gradient(Y, X, V, priors, proper_mean_prior=False):
    Y, X, V = _check_data(Y, X, V)
    if X is None:
        raise DataError("the response envelope needs covariates X")
    n, q = X.shape
    c1, c2 = response_envelope_coefficients(n, q, priors.nu0, priors.nu1, proper_mean_prior)
    A, _ = regression_residual(Y, X, priors.Lambda0)
    _, material_grad = _projected_logdet(A, priors.U1, V, 'U1')
    _, immaterial_grad = _identity_logdet(Y.T @ Y, priors.U0, V, 'U0')
    return -c1 * material_grad - c2 * immaterial_grad


def cook_objective(Y, X, V, Vperp=None):
    """
    log|V^T A V| + log|V_perp^T Y^T Y V_perp| with A the OLS residual scatter.

    Classical likelihood criterion for the response envelope; smaller is better.
    """
    Y, X, V = _check_data(Y, X, V)
    A, _ = regression_residual(Y, X, 0.0)
    Vp = _complement(V, Vperp)
    _check_complement(V, Vp)
    return (_logdet(V.T @ A @ V, "projected residual scatter")
            + _logdet(Vp.T @ (Y.T @ Y) @ Vp, "projected response scatter"))


# ========================================
# SHARED SUBSPACE
# ========================================

def _group_terms(groups, V, group_priors, alpha, kappa):
    if not groups:
        raise ConfigError("shared subspace objective needs at least one group")
    V = as_matrix(V)
    # a bare (U, nu) tuple is shared by every group
    if isinstance(group_priors, tuple) and len(group_priors) == 2 and np.ndim(group_priors[1]) == 0:
        group_priors = [group_priors] * len(groups)
    if len(group_priors) != len(groups):
        raise ConfigError(f"got {len(group_priors)} group priors for {len(groups)} groups")

    value = 0.0
    gradient = np.zeros_like(V)
    for Y_k, (U_k, nu_k) in zip(groups, group_priors):
        Y_k, _, V = _check_data(Y_k, None, V)
        c_k = (Y_k.shape[0] + nu_k) / 2.0
        logdet, logdet_grad = _projected_logdet(Y_k.T @ Y_k, U_k, V, 'U_k')
        residual, residual_grad = _residual_term(Y_k, V, alpha, kappa)
        value += -c_k * logdet + residual
        gradient += -c_k * logdet_grad + residual_grad
    return value, gradient


def shared_subspace_loglik(groups, V, group_priors, alpha, kappa):
    """
    Sum over groups of the spiked log-likelihood with each group's
    material covariance integrated out.

    Args:
        groups: list of n_k x p response matrices
        V: p x s orthonormal basis
        group_priors: list of (U_k, nu_k), or one (U, nu) pair shared by all groups
        alpha, kappa: inverse-Gamma prior on the noise level
    """
    value, _ = _group_terms(groups, V, group_priors, alpha, kappa)
    return value


def shared_subspace_gradient(groups, V, group_priors, alpha, kappa):
    _, gradient = _group_terms(groups, V, group_priors, alpha, kappa)
    return gradient


class ObjectiveFunction(NamedTuple):
    value: Callable
    gradient: Callable


# Value/gradient pairs with matching signatures.
OBJECTIVES = {
    'general_marginal': ObjectiveFunction(
        partial(general_marginal_loglik, use_identity=True), general_marginal_gradient),
    'spiked_marginal': ObjectiveFunction(spiked_marginal_loglik, spiked_marginal_gradient),
    'mstep': ObjectiveFunction(mstep_objective, mstep_gradient),
    'mstep_inverse_wishart': ObjectiveFunction(mstep_general_objective, mstep_general_gradient),
    'response_envelope': ObjectiveFunction(
        partial(response_envelope_loglik, use_identity=True), response_envelope_gradient),
    'shared_subspace': ObjectiveFunction(shared_subspace_loglik, shared_subspace_gradient),
}
