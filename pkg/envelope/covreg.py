"""
Gibbs sampler for linear covariance regression on projected data.

Each row z_i of the s-dimensional projected data follows

    z_i = x_i eta + sum_k gamma_ik (B_k x_i)^T + e_i,   gamma_ik ~ N(0, 1),  e_i ~ N(0, A)

so that, with the latent factors integrated out,
Cov(z_i | x_i) = Psi(x_i) = sum_k (B_k x_i)(B_k x_i)^T + A.
A sweep draws gamma, then (eta, B_1..B_K) jointly, then A.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import linalg
from scipy.stats import invwishart

from .exceptions import ConfigError, DataError, NumericalError
from .models import CovRegDraw, CovRegPrior, CovRegSamples, CovRegState, PosteriorMoments

logger = logging.getLogger(__name__)

JITTER = 1e-8


def _rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _cholesky(P, what):
    """Lower Cholesky factor, retrying once with a 1e-8 diagonal jitter."""
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        logger.debug(f"{what} not numerically positive definite, adding jitter")
    try:
        return np.linalg.cholesky(P + JITTER * np.eye(P.shape[-1]))
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite even after jitter") from None


def _check_inputs(Z, X, state=None):
    Z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    if Z.ndim != 2 or X.ndim != 2 or Z.shape[0] != X.shape[0]:
        raise DataError(f"projected data {Z.shape} and covariates {X.shape} do not line up")
    if state is not None and (state.n, state.s, state.q) != (Z.shape[0], Z.shape[1], X.shape[1]):
        raise DataError(
            f"state dims (n={state.n}, s={state.s}, q={state.q}) do not match data "
            f"(n={Z.shape[0]}, s={Z.shape[1]}, q={X.shape[1]})"
        )
    return Z, X


# ========================================
# COVARIANCE FUNCTION
# ========================================

def psi_of_x(B, A, x):
    """sum_k (B_k x)(B_k x)^T + A for a single covariate vector."""
    B = np.asarray(B, dtype=float)
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    if B.size == 0:
        return _symmetrize(A.copy())
    if B.ndim != 3 or B.shape[1:] != (A.shape[0], x.shape[0]):
        raise DataError(f"B shape {B.shape} does not match A {A.shape} and x of length {x.shape[0]}")
    Bx = np.einsum('ksq,q->ks', B, x)
    return _symmetrize(A + Bx.T @ Bx)


def psi_of_rows(B, A, X):
    """Psi(x_i) for every row of X, as an n x s x s array."""
    B = np.asarray(B, dtype=float)
    X = np.asarray(X, dtype=float)
    Psi = np.broadcast_to(np.asarray(A, dtype=float), (X.shape[0],) + np.shape(A)).copy()
    if B.size:
        Bx = np.einsum('ksq,nq->nks', B, X)
        Psi += np.einsum('nks,nkt->nst', Bx, Bx)
    return _symmetrize(Psi)


# ========================================
# DENSITIES
# ========================================

def _fitted_mean(state, X):
    mean = X @ state.eta
    if state.K:
        Bx = np.einsum('ksq,nq->nks', state.B, X)
        mean = mean + np.einsum('nk,nks->ns', state.gamma, Bx)
    return mean


def complete_log_likelihood(state, Z, X):
    """log p(Z, gamma | eta, B, A), latent factors included."""
    Z, X = _check_inputs(Z, X, state)
    n, s = Z.shape
    R = Z - _fitted_mean(state, X)
    chol = _cholesky(state.A, "baseline covariance A")
    scaled = linalg.solve_triangular(chol, R.T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    data_term = -0.5 * (n * s * np.log(2 * np.pi) + n * logdet + np.sum(scaled ** 2))
    latent_term = -0.5 * (state.gamma.size * np.log(2 * np.pi) + np.sum(state.gamma ** 2))
    return float(data_term + latent_term)


def log_prior(state):
    """Normal priors on eta and B, inverse-Wishart on A."""
    hyper = state.hyper
    s = state.s
    value = 0.0
    if hyper.mean_model and state.eta.size:
        value += -0.5 * (state.eta.size * np.log(2 * np.pi * hyper.tau_eta2) + np.sum(state.eta ** 2) / hyper.tau_eta2)
    if state.B.size:
        value += -0.5 * (state.B.size * np.log(2 * np.pi * hyper.tau_B2) + np.sum(state.B ** 2) / hyper.tau_B2)
    scale = hyper.scale_A(s)
    if s == 1:
        value += invwishart.logpdf(state.A[0, 0], df=hyper.df_A(s), scale=scale[0, 0])
    else:
        value += invwishart.logpdf(state.A, df=hyper.df_A(s), scale=scale)
    return float(value)


def log_posterior(state, Z, X):
    """Unnormalized log joint of data, latent factors and parameters."""
    return complete_log_likelihood(state, Z, X) + log_prior(state)


# ========================================
# GIBBS SWEEP
# ========================================

def _draw_gamma(state, Z, X, A_inv, rng):
    n, K = state.n, state.K
    W = np.einsum('ksq,nq->nsk', state.B, X)
    R = Z - X @ state.eta
    AW = np.einsum('st,ntk->nsk', A_inv, W)
    precision = np.eye(K) + np.einsum('nsk,nsl->nkl', W, AW)
    rhs = np.einsum('nsk,ns->nk', AW, R)
    chol = _cholesky(precision, "latent factor precision")
    mean = np.linalg.solve(precision, rhs[..., None])[..., 0]
    noise = rng.standard_normal((n, K))
    offset = np.linalg.solve(np.swapaxes(chol, 1, 2), noise[..., None])[..., 0]
    return mean + offset


def _design(state, X, gamma):
    blocks = [X] if state.hyper.mean_model else []
    blocks.extend(gamma[:, [k]] * X for k in range(state.K))
    if not blocks:
        return np.zeros((X.shape[0], 0))
    return np.hstack(blocks)


def _draw_coefficients(state, Z, X, gamma, A_inv, rng):
    """Joint normal draw of Theta = [eta; B_1^T; ...; B_K^T] ((K+1) q x s)."""
    q, s, K = state.q, state.s, state.K
    hyper = state.hyper
    D = _design(state, X, gamma)
    d = D.shape[1]
    eta = np.zeros((q, s))
    B = np.zeros((K, s, q))
    if d == 0:
        return eta, B

    row_precision = np.concatenate([
        np.full(q if hyper.mean_model else 0, 1.0 / hyper.tau_eta2),
        np.full(K * q, 1.0 / hyper.tau_B2),
    ])
    # vec is column-major: Theta's s columns stacked
    precision = np.kron(A_inv, D.T @ D) + np.diag(np.tile(row_precision, s))
    rhs = (D.T @ Z @ A_inv).ravel(order='F')
    chol = _cholesky(precision, "coefficient precision")
    mean = linalg.cho_solve((chol, True), rhs)
    draw = mean + linalg.solve_triangular(chol.T, rng.standard_normal(d * s), lower=False)
    theta = draw.reshape((d, s), order='F')

    offset = 0
    if hyper.mean_model:
        eta = theta[:q]
        offset = q
    for k in range(K):
        B[k] = theta[offset + k * q: offset + (k + 1) * q].T
    return eta, B


def _draw_A(state, Z, X, eta, B, gamma, rng):
    s = state.s
    hyper = state.hyper
    trial = CovRegState(eta=eta, B=B, A=state.A, gamma=gamma, hyper=hyper)
    R = Z - _fitted_mean(trial, X)
    scale = _symmetrize(hyper.scale_A(s) + R.T @ R)
    df = hyper.df_A(s) + Z.shape[0]
    if s == 1:
        A = np.array([[float(invwishart.rvs(df=df, scale=scale[0, 0], random_state=rng))]])
    else:
        A = np.asarray(invwishart.rvs(df=df, scale=scale, random_state=rng), dtype=float)
    return _symmetrize(A)


def gibbs_step(state, Z, X, rng):
    """
    One full sweep of the sampler.

    Args:
        state: current CovRegState
        Z: n x s projected data
        X: n x q covariates
        rng: numpy Generator (or seed)

    Returns:
        CovRegState: the next state
    """
    Z, X = _check_inputs(Z, X, state)
    rng = _rng(rng)

    A_inv = _symmetrize(linalg.cho_solve((_cholesky(state.A, "baseline covariance A"), True), np.eye(state.s)))
    gamma = _draw_gamma(state, Z, X, A_inv, rng) if state.K else state.gamma.copy()
    eta, B = _draw_coefficients(state, Z, X, gamma, A_inv, rng)
    A = _draw_A(state, Z, X, eta, B, gamma, rng)
    return CovRegState(eta=eta, B=B, A=A, gamma=gamma, hyper=state.hyper)


def initial_state(Z, X, K, hyper=None, rng=None):
    """
    Starting point: least-squares eta, small random B, residual-based A.
    """
    Z, X = _check_inputs(Z, X)
    hyper = hyper or CovRegPrior()
    rng = _rng(rng)
    n, s = Z.shape
    q = X.shape[1]
    if K < 0:
        raise ConfigError("K must be nonnegative")

    if hyper.mean_model and q:
        eta, *_ = np.linalg.lstsq(X, Z, rcond=None)
    else:
        eta = np.zeros((q, s))
    R = Z - X @ eta
    A = _symmetrize((hyper.scale_A(s) + R.T @ R) / (n + 1.0))
    B = 0.1 * rng.standard_normal((K, s, q))
    gamma = rng.standard_normal((n, K))
    return CovRegState(eta=eta, B=B, A=A, gamma=gamma, hyper=hyper)


def retained_count(n_iter, burn, thin):
    if burn < 0 or thin < 1:
        raise ConfigError("burn must be >= 0 and thin >= 1")
    if n_iter <= burn:
        raise ConfigError(f"n_iter ({n_iter}) must exceed burn ({burn}); no draws would be kept")
    return (n_iter - burn) // thin


def sample_posterior(Z, X, init, n_iter, burn, thin, rng):
    """
    Run one chain from ``init``.

    Keeps sweep t (1-based) when t > burn and (t - burn) is a multiple of thin.

    Returns:
        CovRegSamples with the retained draws and the final state
    """
    Z, X = _check_inputs(Z, X, init)
    if retained_count(n_iter, burn, thin) == 0:
        raise ConfigError(f"thin={thin} keeps no draws out of {n_iter - burn}")
    rng = _rng(rng)

    state = init
    draws = []
    for t in range(1, n_iter + 1):
        state = gibbs_step(state, Z, X, rng)
        if t > burn and (t - burn) % thin == 0:
            draws.append(CovRegDraw(
                iteration=t,
                eta=state.eta,
                B=state.B,
                A=state.A,
                log_posterior=log_posterior(state, Z, X),
            ))
    logger.debug(f"chain finished: {n_iter} sweeps, {len(draws)} draws kept")
    return CovRegSamples(draws=tuple(draws), final_states=(state,))


def pool_samples(chains):
    """Concatenate chains in order."""
    draws = tuple(d for chain in chains for d in chain.draws)
    finals = tuple(f for chain in chains for f in chain.final_states)
    return CovRegSamples(draws=draws, final_states=finals)


def run_chains(Z, X, inits, n_iter, burn, thin, seeds, threads=1):
    """
    Independent chains, one per (init, seed) pair, pooled in chain order.

    Seeds may be ints or numpy SeedSequences; results do not depend on ``threads``.
    """
    if len(inits) != len(seeds):
        raise ConfigError(f"got {len(inits)} initial states for {len(seeds)} seeds")

    def run(pair):
        init, seed = pair
        return sample_posterior(Z, X, init, n_iter, burn, thin, np.random.default_rng(seed))

    pairs = list(zip(inits, seeds))
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            chains = list(executor.map(run, pairs))
    else:
        chains = [run(pair) for pair in pairs]
    return pool_samples(chains)


# ========================================
# POSTERIOR SUMMARIES
# ========================================

def _require_draws(samples):
    if samples.is_empty:
        raise DataError("posterior summaries need at least one draw")


def posterior_moments(samples, X):
    """
    M_i = mean over draws of (x_i eta) Psi(x_i)^{-1}, K_i = mean of Psi(x_i)^{-1}.
    """
    _require_draws(samples)
    X = np.asarray(X, dtype=float)
    first = samples.draws[0]
    n, s = X.shape[0], first.A.shape[0]
    M = np.zeros((n, s))
    K = np.zeros((n, s, s))
    for draw in samples.draws:
        precision = np.linalg.inv(psi_of_rows(draw.B, draw.A, X))
        M += np.einsum('ij,ijk->ik', X @ draw.eta, precision)
        K += precision
    count = len(samples)
    return PosteriorMoments(M=M / count, K=_symmetrize(K / count))


def posterior_mean_precision(samples, X):
    """E[Psi(x_i)^{-1}] for each row, n x s x s."""
    _require_draws(samples)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = sum(np.linalg.inv(psi_of_rows(d.B, d.A, X)) for d in samples.draws)
    return _symmetrize(total / len(samples))


def posterior_mean_covariance(samples, X):
    """E[Psi(x_i)] for each row, n x s x s."""
    _require_draws(samples)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = sum(psi_of_rows(d.B, d.A, X) for d in samples.draws)
    return _symmetrize(total / len(samples))
