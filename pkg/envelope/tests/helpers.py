"""
Shared fixtures: random feasible bases, SPD matrices and hand-built fits.
"""
import numpy as np

from envelope.models import CovRegDraw, CovRegSamples, EnvelopeFit, FitConfig, StiefelBasis
from envelope.stiefel import orthonormalize


def random_basis(rng, p, s):
    return orthonormalize(rng.standard_normal((p, s)))


def random_orthogonal(rng, s):
    return random_basis(rng, s, s).matrix


def random_spd(rng, d, floor=0.5):
    M = rng.standard_normal((d, d))
    return M @ M.T + floor * np.eye(d)


def make_draw(A, B=None, eta=None, q=1, iteration=1):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    s = A.shape[0]
    eta = np.zeros((q, s)) if eta is None else np.asarray(eta, dtype=float)
    q = eta.shape[0]
    B = np.zeros((0, s, q)) if B is None else np.asarray(B, dtype=float)
    return CovRegDraw(iteration=iteration, eta=eta, B=B, A=A, log_posterior=0.0)


def make_fit(V, draws, sigma2=1.0, config=None, trace=()):
    """EnvelopeFit around fixed draws, bypassing the sampler."""
    basis = V if isinstance(V, StiefelBasis) else StiefelBasis(V)
    return EnvelopeFit(
        V_hat=basis,
        sigma2_hat=sigma2,
        samples=CovRegSamples(draws=tuple(draws)),
        trace=tuple(trace),
        config=config or FitConfig(),
        center=np.zeros(basis.p),
        converged=True,
    )
