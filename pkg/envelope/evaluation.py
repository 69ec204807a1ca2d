"""
Simulation model, covariance loss and the dimension/two-stage experiments.

Simulated rows follow y_i = x_i eta V^T + eps_i with
eps_i ~ N(0, V Psi(x_i) V^T + sigma2 (I - V V^T)) and
Psi(x) = sum_k Gamma_k x x^T Gamma_k^T + sigma2 I.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
from scipy import linalg, stats
from tqdm import tqdm

from . import mcem
from .covreg import psi_of_rows
from .exceptions import ConfigError, DataError, NumericalError
from .models import ExperimentRow, FitConfig, SimTruth, StiefelBasis
from .stiefel import as_matrix, orthonormalize

logger = logging.getLogger(__name__)

MISSPECIFICATION = 'misspecification'
TWO_STAGE = 'two_stage'


# ========================================
# SIMULATION
# ========================================

def truth_covariances(truth, X):
    """Psi(x_i) of the generating model for each row of X."""
    s = truth.V.s
    return psi_of_rows(truth.Gamma, truth.sigma2 * np.eye(s), X)


def simulate_responses(X, truth, rng):
    """Draw Y given covariates X and a fixed truth."""
    X = np.asarray(X, dtype=float)
    V = truth.V.matrix
    n = X.shape[0]
    p, s = V.shape
    chol = np.linalg.cholesky(truth_covariances(truth, X))
    material = np.einsum('nst,nt->ns', chol, rng.standard_normal((n, s)))
    white = rng.standard_normal((n, p))
    immaterial = np.sqrt(truth.sigma2) * (white - (white @ V) @ V.T)
    return X @ truth.eta @ V.T + material @ V.T + immaterial


def simulate(cfg):
    """
    Draw a data set from the simulation model.

    Returns:
        tuple: (Y n x p, X n x q, SimTruth)
    """
    rng = np.random.default_rng(cfg.seed)
    X = rng.standard_normal((cfg.n, cfg.q))
    eta = cfg.tau * rng.standard_normal((cfg.q, cfg.s))
    Gamma = rng.standard_normal((cfg.rank_terms, cfg.s, cfg.q))
    V = orthonormalize(rng.standard_normal((cfg.p, cfg.s)))
    Psi = psi_of_rows(Gamma, cfg.sigma2 * np.eye(cfg.s), X)
    truth = SimTruth(V=V, eta=eta, Gamma=Gamma, sigma2=cfg.sigma2, Psi=Psi)
    Y = simulate_responses(X, truth, rng)
    logger.debug(f"simulated n={cfg.n}, p={cfg.p}, s={cfg.s}, q={cfg.q} with seed {cfg.seed}")
    return Y, X, truth


# ========================================
# LOSSES AND ANGLES
# ========================================

def _spd_factor(M, name):
    try:
        return linalg.cholesky(M, lower=True)
    except linalg.LinAlgError:
        raise DataError(f"{name} is not symmetric positive definite") from None


def steins_loss(Psi, Psi_hat):
    """tr(Psi^{-1} Psi_hat) - log|Psi^{-1} Psi_hat| - d, clipped at 0."""
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    Psi_hat = np.atleast_2d(np.asarray(Psi_hat, dtype=float))
    if Psi.shape != Psi_hat.shape or Psi.shape[0] != Psi.shape[1]:
        raise DataError(f"Stein's loss needs two square matrices of one size, got {Psi.shape} and {Psi_hat.shape}")
    chol = _spd_factor(Psi, "true covariance")
    chol_hat = _spd_factor(Psi_hat, "estimated covariance")
    trace = float(np.trace(linalg.cho_solve((chol, True), Psi_hat)))
    logdet = 2.0 * (np.sum(np.log(np.diag(chol_hat))) - np.sum(np.log(np.diag(chol))))
    return max(0.0, trace - logdet - Psi.shape[0])


def principal_angles(V1, V2):
    """Principal angles between two spans, ascending, in [0, pi/2]."""
    A = as_matrix(V1)
    B = as_matrix(V2)
    if A.shape != B.shape:
        raise DataError(f"bases differ in shape: {A.shape} and {B.shape}")
    return np.sort(linalg.subspace_angles(A, B))


def observation_losses(fit, X, truth):
    """Stein's loss of V_true^T Sigma_hat(x_i) V_true against Psi(x_i), per row of X."""
    estimates = mcem.fitted_covariances(fit, X, projected_only=False, against=truth.V)
    targets = truth_covariances(truth, X)
    return np.array([steins_loss(t, e) for t, e in zip(targets, estimates)])


# ========================================
# EXPERIMENTS
# ========================================

def _derived_seed(*entropy):
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def bootstrap_interval(values, resamples, rng, level=0.95):
    """Percentile interval and standard error of the mean of ``values``."""
    if resamples < 1:
        raise ConfigError("bootstrap resamples must be >= 1")
    values = np.asarray(values, dtype=float)
    if values.size < 2 or np.ptp(values) == 0:
        mean = float(values.mean())
        return mean, mean, 0.0
    result = stats.bootstrap(
        (values,), np.mean, n_resamples=resamples, confidence_level=level,
        method='percentile', vectorized=True, rng=rng,
    )
    interval = result.confidence_interval
    se = float(result.standard_error) if resamples > 1 else 0.0
    return float(interval.low), float(interval.high), se


def _rows(experiment, params, pct, resamples, seed):
    rng = np.random.default_rng(_derived_seed(seed, len(pct), 1))
    rows = []
    for j, param in enumerate(params):
        column = pct[:, j]
        lo, hi, se = bootstrap_interval(column, resamples, rng)
        rows.append(ExperimentRow(
            experiment=experiment,
            param=int(param),
            mean_pct_increase=float(column.mean()),
            ci_lo=lo,
            ci_hi=hi,
            M=int(column.size),
            boot_se=se,
        ))
    return rows


def _map_replicates(run, replicates, threads, progress, desc):
    if threads > 1 and replicates > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(tqdm(executor.map(run, range(replicates)), total=replicates, desc=desc, disable=not progress))
    return [run(m) for m in tqdm(range(replicates), desc=desc, disable=not progress)]


def _mean_loss(fit, X, truth):
    return float(np.mean(observation_losses(fit, X, truth)))


def misspecification_experiment(base, s_tilde_list, replicates, seed, fit_cfg=None,
                                bootstrap=1000, threads=1, allow_full=False, progress=False):
    """
    Percentage increase in Stein's loss when the envelope dimension is set to
    s_tilde instead of the true s, averaged over replicate data sets.

    Args:
        base: SimConfig of the generating model
        s_tilde_list: dimensions to fit; must contain base.s
        replicates: number of simulated data sets M
        seed: master seed
        fit_cfg: FitConfig template for the fits
        bootstrap: bootstrap resamples for the percentile interval
        threads: replicate workers
        allow_full: permit s_tilde = p (covariance regression on the raw data)

    Returns:
        list of ExperimentRow, one per s_tilde in input order
    """
    s_tilde_list = [int(s) for s in s_tilde_list]
    if base.s not in s_tilde_list:
        raise ConfigError(f"s_tilde list must include the true dimension s={base.s}")
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    for s_tilde in s_tilde_list:
        if s_tilde == base.p and not allow_full:
            raise ConfigError(f"s_tilde = p = {base.p} needs allow_full")
        if not 1 <= s_tilde <= base.p:
            raise ConfigError(f"s_tilde must lie in [1, p={base.p}], got {s_tilde}")
    fit_cfg = fit_cfg or FitConfig()
    baseline = s_tilde_list.index(base.s)

    def run(m):
        Y, X, truth = simulate(replace(base, seed=_derived_seed(seed, m)))
        losses = []
        for s_tilde in s_tilde_list:
            cfg = replace(fit_cfg, s=s_tilde, seed=_derived_seed(seed, m, s_tilde), threads=1)
            if s_tilde == base.p:
                fit = mcem.fit_fixed_basis(Y, X, StiefelBasis(np.eye(base.p)), cfg)
            else:
                fit = mcem.fit(Y, X, cfg)
            losses.append(_mean_loss(fit, X, truth))
        if not losses[baseline] > 0:
            raise NumericalError(
                f"replicate {m}: loss at the true dimension is {losses[baseline]:g}, cannot scale by it"
            )
        return losses

    losses = np.array(_map_replicates(run, replicates, threads, progress, MISSPECIFICATION))
    reference = losses[:, [baseline]]
    pct = 100.0 * (losses - reference) / reference
    pct[:, baseline] = 0.0
    logger.info(f"misspecification experiment finished over {replicates} replicate(s)")
    return _rows(MISSPECIFICATION, s_tilde_list, pct, bootstrap, seed)


def two_stage_basis(Y, X, s):
    """Leading right singular vectors of the least-squares residual of centered Y."""
    Y = np.asarray(Y, dtype=float)
    Yc = Y - Y.mean(axis=0)
    residual = Yc - np.asarray(X, dtype=float) @ mcem.ols_coefficients(Yc, np.asarray(X, dtype=float))
    _, _, Vt = np.linalg.svd(residual, full_matrices=False)
    return orthonormalize(Vt[:s].T)


def two_stage_experiment(base, q_list, replicates, seed, fit_cfg=None,
                         bootstrap=1000, threads=1, progress=False):
    """
    Percentage increase in Stein's loss of the two-stage estimate (basis from
    the residual SVD, then covariance regression) over the joint EM fit.

    Returns:
        list of ExperimentRow, one per q in input order
    """
    q_list = [int(q) for q in q_list]
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if not q_list or min(q_list) < 1:
        raise ConfigError("q list must hold positive integers")
    fit_cfg = fit_cfg or FitConfig()

    def run(m):
        increases = []
        for q in q_list:
            Y, X, truth = simulate(replace(base, q=q, seed=_derived_seed(seed, m, q)))
            cfg = replace(fit_cfg, s=base.s, seed=_derived_seed(seed, m, q, 1), threads=1)
            joint = _mean_loss(mcem.fit(Y, X, cfg), X, truth)
            staged_fit = mcem.fit_fixed_basis(Y, X, two_stage_basis(Y, X, base.s), cfg)
            staged = _mean_loss(staged_fit, X, truth)
            if not joint > 0:
                raise NumericalError(f"replicate {m}, q={q}: joint-fit loss is {joint:g}, cannot scale by it")
            increases.append(100.0 * (staged - joint) / joint)
        return increases

    pct = np.array(_map_replicates(run, replicates, threads, progress, TWO_STAGE))
    logger.info(f"two-stage experiment finished over {replicates} replicate(s)")
    return _rows(TWO_STAGE, q_list, pct, bootstrap, seed)
