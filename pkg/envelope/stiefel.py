"""
Feasible curvilinear search over the Stiefel manifold.

Every iterate stays orthonormal: a step follows the Cayley curve
Y(tau) = (I + tau/2 A)^{-1} (I - tau/2 A) V with A = G V^T - V G^T,
evaluated through its rank-2s factorisation so one step costs
O(p s^2 + s^3) instead of a p x p solve.
"""
import logging

import numpy as np

from .exceptions import ConfigError, DataError, NumericalError, RankDeficientError
from .models import OptimizerConfig, StiefelBasis

logger = logging.getLogger(__name__)

MAX_HALVINGS = 30
MAX_BACKTRACKS = 50
RETRACTION_DRIFT_TOL = 1e-12


def as_matrix(V):
    """Raw p x s array behind a basis or array-like."""
    if isinstance(V, StiefelBasis):
        return V.matrix
    return np.asarray(V, dtype=float)


def orthonormalize(M):
    """
    Thin QR of M with a nonnegative diagonal of R.

    Args:
        M: p x s matrix of full column rank

    Returns:
        StiefelBasis spanning the columns of M
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DataError(f"expected a 2-dimensional matrix, got shape {M.shape}")
    p, s = M.shape
    if s > p:
        raise RankDeficientError(s - p, s)
    singular_values = np.linalg.svd(M, compute_uv=False)
    if singular_values.size == 0 or singular_values[0] == 0:
        rank = 0
    else:
        rank = int(np.sum(singular_values > 1e-10 * singular_values[0]))
    if rank < s:
        raise RankDeficientError(s - rank, s)

    Q, R = np.linalg.qr(M)
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return StiefelBasis(Q * signs)


def projector_distance(V1, V2):
    """||V1 V1^T - V2 V2^T||_F; depends only on the two spans."""
    P1 = as_matrix(V1) @ as_matrix(V1).T
    P2 = as_matrix(V2) @ as_matrix(V2).T
    if P1.shape != P2.shape:
        raise DataError(f"bases live in different dimensions: {P1.shape[0]} and {P2.shape[0]}")
    return float(np.linalg.norm(P1 - P2))


def riemannian_gradient(V, G):
    """
    Tangent direction A V with A = G V^T - V G^T.

    Computed as G (V^T V) - V (G^T V), never forming the p x p matrix A.
    """
    X = as_matrix(V)
    G = np.asarray(G, dtype=float)
    if G.shape != X.shape:
        raise DataError(f"gradient shape {G.shape} does not match basis shape {X.shape}")
    return G @ (X.T @ X) - X @ (G.T @ X)


def _cayley_curve(X, G, tau):
    """Point on the Cayley curve and the step actually taken after any halvings."""
    s = X.shape[1]
    U = np.hstack([G, X])
    W = np.hstack([X, -G])
    WtU = W.T @ U
    WtX = W.T @ X
    identity = np.eye(2 * s)

    step = float(tau)
    for _ in range(MAX_HALVINGS + 1):
        try:
            inner = np.linalg.solve(identity + 0.5 * step * WtU, WtX)
        except np.linalg.LinAlgError:
            inner = None
        if inner is not None and np.all(np.isfinite(inner)):
            Y = X - step * (U @ inner)
            if np.max(np.abs(Y.T @ Y - np.eye(s))) > RETRACTION_DRIFT_TOL:
                Y = orthonormalize(Y).matrix
            return Y, step
        logger.debug(f"singular Cayley system at tau={step:.3e}, halving")
        step *= 0.5
    raise NumericalError(f"Cayley system stayed singular after {MAX_HALVINGS} halvings of tau={tau}")


def cayley_retract(V, G, tau):
    """
    Move from V along the Cayley curve generated by G.

    The curve leaves V in direction -A V; tau = 0 returns V itself.
    """
    if tau < 0:
        raise ConfigError("tau must be nonnegative")
    basis = V if isinstance(V, StiefelBasis) else StiefelBasis(V)
    G = np.asarray(G, dtype=float)
    if G.shape != basis.matrix.shape:
        raise DataError(f"gradient shape {G.shape} does not match basis shape {basis.matrix.shape}")
    if tau == 0:
        return basis
    Y, _ = _cayley_curve(basis.matrix, G, tau)
    return StiefelBasis(Y)


def maximize_on_stiefel(objective, euclidean_grad, V0, cfg=None):
    """
    Maximize a smooth objective over orthonormal p x s matrices.

    Armijo backtracking along the Cayley curve with Barzilai-Borwein
    initial steps. With ``nonmonotone_window = 0`` the stored trace is
    nondecreasing.

    Args:
        objective: callable V -> float
        euclidean_grad: callable V -> p x s gradient of the objective
        V0: starting StiefelBasis
        cfg: OptimizerConfig

    Returns:
        tuple: (StiefelBasis, list of objective values, one per accepted iterate)
    """
    cfg = cfg or OptimizerConfig()
    basis = V0 if isinstance(V0, StiefelBasis) else StiefelBasis(V0)

    value = float(objective(basis.matrix))
    if not np.isfinite(value):
        raise NumericalError("objective is not finite at the starting basis")
    egrad = np.asarray(euclidean_grad(basis.matrix), dtype=float)
    # Search minimizes -objective, so the descent generator is G = -egrad.
    G = -egrad
    direction = riemannian_gradient(basis, G)

    trace = [value]
    tau = cfg.step_init
    iteration = 0
    for iteration in range(1, cfg.max_iters + 1):
        if np.linalg.norm(direction) < cfg.grad_tol:
            break

        # d/dtau objective(Y(tau)) at 0, along Y'(0) = -A V
        slope = float(np.sum(egrad * -direction))
        reference = min(trace[-(cfg.nonmonotone_window + 1):])

        step = tau
        nonfinite = 0
        accepted = None
        for _ in range(MAX_BACKTRACKS):
            Y, step = _cayley_curve(basis.matrix, G, step)
            candidate = float(objective(Y))
            if not np.isfinite(candidate):
                nonfinite += 1
                if nonfinite >= MAX_HALVINGS:
                    raise NumericalError(f"objective stayed non-finite after {nonfinite} step shrinks")
                step *= cfg.backtrack_factor
                continue
            if candidate >= reference + cfg.armijo_c * step * slope:
                accepted = (Y, candidate)
                break
            step *= cfg.backtrack_factor

        if accepted is None:
            logger.debug(f"line search stalled at iteration {iteration}")
            break

        Y, candidate = accepted
        previous_value = trace[-1]
        previous_matrix, previous_direction = basis.matrix, direction

        basis = StiefelBasis(Y)
        egrad = np.asarray(euclidean_grad(basis.matrix), dtype=float)
        G = -egrad
        direction = riemannian_gradient(basis, G)
        trace.append(candidate)

        if cfg.rel_tol > 0 and abs(candidate - previous_value) <= cfg.rel_tol * (abs(previous_value) + 1.0):
            break

        # Barzilai-Borwein step, alternating the two classic ratios
        S = basis.matrix - previous_matrix
        D = direction - previous_direction
        sy = abs(float(np.sum(S * D)))
        if sy > 0:
            if iteration % 2:
                tau = float(np.sum(S * S)) / sy
            else:
                tau = sy / float(np.sum(D * D))
        else:
            tau = step
        tau = float(np.clip(tau, 1e-20, 1e20))

    logger.debug(
        f"Stiefel search finished after {iteration} iteration(s): "
        f"objective {trace[0]:.6g} -> {trace[-1]:.6g}"
    )
    return basis, trace
