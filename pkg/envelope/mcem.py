"""
Monte Carlo EM estimation of the envelope basis.

E-step: posterior draws of the projected-data covariance regression at the
current basis give the moments M_i = E[phi_i Psi_i^{-1}] and K_i = E[Psi_i^{-1}].
M-step: the basis maximizing the marginal log-likelihood with those moments
plugged in, found by curvilinear search on the Stiefel manifold.
"""
import logging

import numpy as np

from . import covreg
from .exceptions import ConfigError, DataError, NumericalError
from .models import EnvelopeFit, FitConfig, FitTraceEntry, StiefelBasis
from .objectives import OBJECTIVES, residual_energy
from .stiefel import as_matrix, maximize_on_stiefel, orthonormalize, projector_distance

logger = logging.getLogger(__name__)

RIDGE = 1e-8


def _check_data(Y, X):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise DataError(f"Y must be n x p, got shape {Y.shape}")
    if X is None:
        X = np.zeros((Y.shape[0], 0))
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DataError(f"X has {X.shape[0] if X.ndim else 0} rows but Y has {Y.shape[0]}")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
        raise DataError("Y and X must be finite")
    return Y, X


# ========================================
# RANK SELECTION
# ========================================

def threshold_coefficient(beta):
    """Polynomial approximation of the optimal hard-threshold coefficient for unknown noise."""
    return 0.56 * beta ** 3 - 0.95 * beta ** 2 + 1.82 * beta + 1.43


def select_rank(Y):
    """
    Number of singular values of Y above omega(beta) * median singular value.

    Returns:
        int in [0, min(n, p))
    """
    Y = np.asarray(Y, dtype=float)
    n, p = Y.shape
    singular_values = np.linalg.svd(Y, compute_uv=False)
    if singular_values.size == 0 or singular_values[0] == 0:
        return 0
    beta = min(n, p) / max(n, p)
    cutoff = threshold_coefficient(beta) * np.median(singular_values)
    rank = int(np.sum(singular_values > cutoff))
    return min(rank, min(n, p) - 1)


# ========================================
# INITIALIZATION
# ========================================

def ols_coefficients(Y, X):
    """Least-squares coefficients (q x p); a tiny ridge is added when X^T X is singular."""
    gram = X.T @ X
    q = gram.shape[0]
    singular = False
    try:
        np.linalg.cholesky(gram)
        singular = np.linalg.cond(gram) > 1e12
    except np.linalg.LinAlgError:
        singular = True
    if singular:
        logger.warning(f"X^T X is singular, adding a {RIDGE:g} ridge for the least-squares start")
        gram = gram + RIDGE * np.eye(q)
    return np.linalg.solve(gram, X.T @ Y)


def _leading_directions(M, count, tol=1e-8):
    """Up to ``count`` leading left singular vectors of M above a relative tolerance."""
    if M.size == 0 or count <= 0:
        return np.zeros((M.shape[0], 0))
    U, sv, _ = np.linalg.svd(M, full_matrices=False)
    if sv[0] == 0:
        return np.zeros((M.shape[0], 0))
    rank = int(np.sum(sv > tol * sv[0]))
    return U[:, :min(rank, count)]


def _complete(columns, s):
    """Pad orthonormal columns to s with directions from a full QR."""
    p = columns.shape[0]
    if columns.shape[1] >= s:
        return columns[:, :s]
    if columns.shape[1] == 0:
        return np.eye(p)[:, :s]
    q, _ = np.linalg.qr(columns, mode='complete')
    return np.hstack([columns, q[:, columns.shape[1]:s]])


def init_basis(Y, X, s):
    """
    Starting basis from the least-squares fit.

    Leading directions of the OLS coefficients span the mean part; the rest
    are filled with the leading right singular vectors of the residual,
    taken orthogonal to what is already chosen.

    Args:
        Y: n x p responses (centered)
        X: n x q covariates, or None
        s: basis dimension

    Returns:
        StiefelBasis
    """
    Y, X = _check_data(Y, X)
    p = Y.shape[1]
    if not 1 <= s <= p:
        raise ConfigError(f"s must satisfy 1 <= s <= p = {p}, got {s}")

    if X.shape[1] == 0 or not np.any(X):
        basis = _leading_directions(Y.T, s)
        return orthonormalize(_complete(basis, s))

    beta = ols_coefficients(Y, X)
    mean_part = _leading_directions(beta.T, s)
    if mean_part.shape[1] < s:
        residual = Y - X @ beta
        residual = residual - (residual @ mean_part) @ mean_part.T
        fill = _leading_directions(residual.T, s - mean_part.shape[1])
        mean_part = np.hstack([mean_part, fill])
    return orthonormalize(_complete(mean_part, s))


# ========================================
# NOISE LEVEL
# ========================================

def estimate_sigma2(Y, V, alpha, kappa):
    """
    Posterior mean of sigma^2 given the basis.

    (1/2 ||Y||^2 - 1/2 ||YV||^2 + kappa) / (n (p - s) / 2 + alpha - 1)
    """
    Y = np.asarray(Y, dtype=float)
    V = as_matrix(V)
    n, p = Y.shape
    shape = n * (p - V.shape[1]) / 2.0 + alpha
    if shape <= 1:
        raise ConfigError(f"n (p - s) / 2 + alpha must exceed 1, got {shape:g}")
    return residual_energy(Y, V, kappa) / (shape - 1.0)


# ========================================
# E-STEP / M-STEP
# ========================================

def gibbs_e_step(Z, X, cfg, iteration, previous=None):
    """
    Default E-step: covariance-regression chains on the projected data.

    The first call runs cold chains with the full budget; later calls restart
    from the previous final states with the shorter warm budget.
    """
    schedule = cfg.mcmc
    warm = previous is not None and len(previous.final_states) == schedule.chains
    n_iter = schedule.warm_n_iter if warm else schedule.n_iter
    burn = schedule.warm_burn if warm else schedule.burn

    seeds = []
    inits = []
    for chain in range(schedule.chains):
        init_seed, chain_seed = np.random.SeedSequence([cfg.seed, iteration, chain]).spawn(2)
        seeds.append(chain_seed)
        if warm:
            inits.append(previous.final_states[chain])
        else:
            inits.append(covreg.initial_state(Z, X, cfg.K, cfg.covreg, np.random.default_rng(init_seed)))

    logger.info(
        f"E-step {iteration}: {schedule.chains} {'warm' if warm else 'cold'} chain(s), "
        f"{n_iter} sweeps, burn {burn}"
    )
    return covreg.run_chains(Z, X, inits, n_iter, burn, schedule.thin, seeds, threads=cfg.threads)


def _m_step_objective(Y, X, moments, cfg):
    priors = cfg.priors
    if cfg.objective == 'spiked':
        pair = OBJECTIVES['mstep']
        args = (moments, priors.alpha, priors.kappa)
    else:
        pair = OBJECTIVES['mstep_inverse_wishart']
        args = (moments, priors.U0, priors.nu0)

    def value(V):
        return pair.value(Y, X, V, *args)

    def gradient(V):
        return pair.gradient(Y, X, V, *args)

    return value, gradient


def m_step(Y, X, basis, moments, cfg):
    """Maximize the moment-substituted objective from ``basis``; returns (basis, trace)."""
    value, gradient = _m_step_objective(Y, X, moments, cfg)
    return maximize_on_stiefel(value, gradient, basis, cfg.optimizer)


# ========================================
# FIT
# ========================================

def _resolve_dimension(Yc, cfg, initial_basis):
    """Returns (s, forced); forced is set when rank selection found nothing and s=1 was imposed."""
    n, p = Yc.shape
    s = cfg.s
    forced = False
    if initial_basis is not None:
        if s and s != initial_basis.s:
            raise ConfigError(f"initial basis has s={initial_basis.s} but the config asks for s={s}")
        if initial_basis.p != p:
            raise DataError(f"initial basis has p={initial_basis.p} but Y has {p} columns")
        s = initial_basis.s
    if s == 0:
        s = select_rank(Yc)
        logger.info(f"selected envelope dimension s={s}")
        if s == 0:
            logger.warning("rank selection found no signal; falling back to s=1")
            s = 1
            forced = True
    if s >= min(n, p):
        raise ConfigError(f"s must be < min(n, p) = {min(n, p)}, got s={s}")
    return s, forced


def fit(Y, X, cfg=None, initial_basis=None, e_step=None):
    """
    Monte Carlo EM for the envelope basis.

    Args:
        Y: n x p responses; columns are centered internally
        X: n x q covariates
        cfg: FitConfig
        initial_basis: optional starting StiefelBasis (skips the least-squares start)
        e_step: optional callable (Z, X, cfg, iteration, previous) -> CovRegSamples

    Returns:
        EnvelopeFit whose samples come from an E-step at the returned basis
    """
    cfg = cfg or FitConfig()
    Y, X = _check_data(Y, X)
    n, p = Y.shape
    if n < 2:
        raise DataError("need at least two observations")
    sampler = e_step or gibbs_e_step

    center = Y.mean(axis=0)
    Yc = Y - center
    s, forced = _resolve_dimension(Yc, cfg, initial_basis)
    basis = initial_basis if initial_basis is not None else init_basis(Yc, X, s)
    priors = cfg.priors

    samples = None
    trace = []
    converged = False
    for iteration in range(1, cfg.em_max_iters + 1):
        samples = sampler(Yc @ basis.matrix, X, cfg, iteration, samples)
        moments = covreg.posterior_moments(samples, X)
        updated, objectives = m_step(Yc, X, basis, moments, cfg)
        step = projector_distance(basis, updated)
        sigma2 = estimate_sigma2(Yc, updated, priors.alpha, priors.kappa)
        trace.append(FitTraceEntry(
            iteration=iteration,
            objective=objectives[-1],
            step=step,
            sigma2=sigma2,
            objectives=tuple(objectives),
        ))
        logger.info(
            f"EM iteration {iteration}: M-step objective {objectives[-1]:.6g}, "
            f"projector step {step:.3e}, sigma2 {sigma2:.4g}"
        )
        basis = updated
        if step < cfg.em_tol:
            converged = True
            break

    if cfg.em_max_iters and not converged:
        logger.warning(f"EM did not converge in {cfg.em_max_iters} iteration(s)")

    samples = sampler(Yc @ basis.matrix, X, cfg, len(trace) + 1, samples)
    return EnvelopeFit(
        V_hat=basis,
        sigma2_hat=estimate_sigma2(Yc, basis, priors.alpha, priors.kappa),
        samples=samples,
        trace=tuple(trace),
        config=cfg,
        center=center,
        converged=converged,
        dimension_forced=forced,
    )


def fit_fixed_basis(Y, X, V, cfg=None, e_step=None):
    """Posterior for the projected data at a given basis, without updating it."""
    cfg = cfg or FitConfig()
    Y, X = _check_data(Y, X)
    basis = V if isinstance(V, StiefelBasis) else StiefelBasis(V)
    if basis.p != Y.shape[1]:
        raise DataError(f"basis has p={basis.p} but Y has {Y.shape[1]} columns")
    sampler = e_step or gibbs_e_step
    center = Y.mean(axis=0)
    Yc = Y - center
    samples = sampler(Yc @ basis.matrix, X, cfg, 1, None)
    return EnvelopeFit(
        V_hat=basis,
        sigma2_hat=estimate_sigma2(Yc, basis, cfg.priors.alpha, cfg.priors.kappa),
        samples=samples,
        trace=(),
        config=cfg,
        center=center,
        converged=True,
    )


# ========================================
# FITTED COVARIANCES
# ========================================

def fitted_covariances(fit, X, projected_only=True, against=None):
    """
    Bayes estimates under Stein's loss for every row of X.

    Projected: Psi_hat(x) = E[Psi(x)^{-1}]^{-1} (n x s x s).
    Full: V Psi_hat V^T + sigma2 (I - V V^T) (n x p x p), or its
    compression W^T Sigma_hat W onto another basis W when ``against`` is given.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    precision = covreg.posterior_mean_precision(fit.samples, X)
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise NumericalError("posterior mean precision is singular") from None
    chol_inv = np.linalg.inv(chol)
    psi_hat = np.swapaxes(chol_inv, 1, 2) @ chol_inv
    psi_hat = 0.5 * (psi_hat + np.swapaxes(psi_hat, 1, 2))
    if projected_only and against is None:
        return psi_hat

    V = fit.V_hat.matrix
    if against is None:
        W = np.eye(fit.p)
    else:
        W = as_matrix(against)
        if W.shape[0] != fit.p:
            raise DataError(f"comparison basis has p={W.shape[0]} but the fit has p={fit.p}")
    VW = V.T @ W
    sigma = np.einsum('sa,nst,tb->nab', VW, psi_hat, VW)
    sigma += fit.sigma2_hat * (W.T @ W - VW.T @ VW)
    return 0.5 * (sigma + np.swapaxes(sigma, 1, 2))


def fitted_covariance(fit, x, projected_only=True, against=None):
    """Single-x form of fitted_covariances."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return fitted_covariances(fit, x, projected_only=projected_only, against=against)[0]
