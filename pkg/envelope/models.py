"""
Domain records for envelope covariance regression.

Plain immutable dataclasses; nothing here is persisted to a database.
Array fields are copied on construction and marked read-only.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .exceptions import ConfigError, DataError, NumericalError

FEASIBILITY_TOL = 1e-10

# Prior scale matrices may be given as scalar * identity or as a full matrix.
ScaleLike = Union[float, np.ndarray]


def _frozen_array(value, ndim=None, name='array'):
    arr = np.array(value, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_scale(value, name, allow_singular=False):
    """Validate a scalar or matrix prior scale; returns it unchanged."""
    if np.ndim(value) == 0:
        bound_ok = value >= 0 if allow_singular else value > 0
        if not bound_ok:
            raise ConfigError(f"{name} must be {'nonnegative' if allow_singular else 'positive'}")
        return float(value)
    mat = _frozen_array(value, ndim=2, name=name)
    if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T, atol=1e-10):
        raise ConfigError(f"{name} must be a symmetric square matrix")
    smallest = np.linalg.eigvalsh(mat)[0]
    if smallest < -1e-12 or (not allow_singular and smallest <= 0):
        raise ConfigError(f"{name} must be positive {'semi-' if allow_singular else ''}definite")
    return mat


# ========================================
# STIEFEL MANIFOLD
# ========================================

@dataclass(frozen=True, eq=False)
class StiefelBasis:
    """Semi-orthogonal p x s basis, V^T V = I_s"""
    matrix: np.ndarray

    def __post_init__(self):
        mat = _frozen_array(self.matrix, ndim=2, name='basis')
        p, s = mat.shape
        if not 1 <= s <= p:
            raise ConfigError(f"basis must satisfy 1 <= s <= p, got p={p}, s={s}")
        drift = np.max(np.abs(mat.T @ mat - np.eye(s)))
        if drift > FEASIBILITY_TOL:
            raise NumericalError(f"basis columns are not orthonormal (max drift {drift:.3e})")
        object.__setattr__(self, 'matrix', mat)

    @property
    def p(self):
        return self.matrix.shape[0]

    @property
    def s(self):
        return self.matrix.shape[1]

    @property
    def projector(self):
        return self.matrix @ self.matrix.T

    def complement(self):
        """Orthonormal basis of the orthogonal complement, from a full QR of V."""
        if self.s == self.p:
            raise ConfigError("the complement of a full basis is empty (s must be < p)")
        q, _ = np.linalg.qr(self.matrix, mode='complete')
        return StiefelBasis(q[:, self.s:])

    def rotate(self, R):
        return StiefelBasis(self.matrix @ np.asarray(R, dtype=float))


@dataclass(frozen=True)
class OptimizerConfig:
    """Controls for the curvilinear search over the Stiefel manifold"""
    max_iters: int = 1000
    grad_tol: float = 1e-8
    step_init: float = 1e-3
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    nonmonotone_window: int = 0
    # Relative objective change below which the search stops; 0 disables.
    rel_tol: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be a positive integer")
        if self.grad_tol <= 0 or self.step_init <= 0:
            raise ConfigError("grad_tol and step_init must be positive")
        if not 0 < self.armijo_c < 1:
            raise ConfigError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ConfigError("backtrack_factor must lie in (0, 1)")
        if self.nonmonotone_window < 0 or self.rel_tol < 0:
            raise ConfigError("nonmonotone_window and rel_tol must be nonnegative")


# ========================================
# OBJECTIVE INPUTS
# ========================================

@dataclass(frozen=True, eq=False)
class PriorConfig:
    """Conjugate prior hyperparameters for the marginal likelihoods"""
    U0: ScaleLike = 1.0
    nu0: float = 1.0
    U1: ScaleLike = 1.0
    nu1: float = 1.0
    Lambda0: ScaleLike = 1.0
    alpha: float = 2.0
    kappa: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'U0', _check_scale(self.U0, 'U0'))
        object.__setattr__(self, 'U1', _check_scale(self.U1, 'U1'))
        object.__setattr__(self, 'Lambda0', _check_scale(self.Lambda0, 'Lambda0', allow_singular=True))
        for name in ('nu0', 'nu1', 'alpha', 'kappa'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class ProjectedParams:
    """Known projected-data means phi_i (n x s) and precisions Psi_i^{-1} (n x s x s)"""
    phi: np.ndarray
    psi_inv: np.ndarray

    def __post_init__(self):
        phi = _frozen_array(self.phi, ndim=2, name='phi')
        psi_inv = _frozen_array(self.psi_inv, ndim=3, name='psi_inv')
        if psi_inv.shape != (phi.shape[0], phi.shape[1], phi.shape[1]):
            raise DataError(f"psi_inv shape {psi_inv.shape} does not match phi shape {phi.shape}")
        if not np.allclose(psi_inv, np.swapaxes(psi_inv, 1, 2), atol=1e-10):
            raise DataError("psi_inv entries must be symmetric")
        if np.min(np.linalg.eigvalsh(psi_inv)) <= 0:
            raise DataError("psi_inv entries must be positive definite")
        object.__setattr__(self, 'phi', phi)
        object.__setattr__(self, 'psi_inv', psi_inv)


@dataclass(frozen=True, eq=False)
class PosteriorMoments:
    """E-step moments: M_i = E[phi_i Psi_i^{-1}] (n x s), K_i = E[Psi_i^{-1}] (n x s x s)"""
    M: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        M = _frozen_array(self.M, ndim=2, name='M')
        K = _frozen_array(self.K, ndim=3, name='K')
        if K.shape != (M.shape[0], M.shape[1], M.shape[1]):
            raise DataError(f"K shape {K.shape} does not match M shape {M.shape}")
        object.__setattr__(self, 'M', M)
        object.__setattr__(self, 'K', K)

    @classmethod
    def from_params(cls, params):
        """Moments of a point mass at known (phi, Psi^{-1})."""
        return cls(M=np.einsum('ij,ijk->ik', params.phi, params.psi_inv), K=params.psi_inv)


# ========================================
# COVARIANCE REGRESSION
# ========================================

@dataclass(frozen=True, eq=False)
class CovRegPrior:
    """Prior scales for the projected-data covariance regression"""
    tau_eta2: float = 100.0
    tau_B2: float = 100.0
    S_A: Optional[np.ndarray] = None  # defaults to I_s
    nu_A: Optional[float] = None      # defaults to s + 2
    mean_model: bool = True

    def __post_init__(self):
        if self.tau_eta2 <= 0 or self.tau_B2 <= 0:
            raise ConfigError("tau_eta2 and tau_B2 must be positive")
        if self.S_A is not None:
            object.__setattr__(self, 'S_A', _check_scale(np.atleast_2d(self.S_A), 'S_A'))

    def scale_A(self, s):
        return np.eye(s) if self.S_A is None else np.asarray(self.S_A)

    def df_A(self, s):
        nu = s + 2.0 if self.nu_A is None else float(self.nu_A)
        if nu <= s - 1:
            raise ConfigError(f"nu_A must exceed s - 1 = {s - 1}")
        return nu


@dataclass(frozen=True, eq=False)
class CovRegState:
    """One state of the Gibbs chain: eta (q x s), B (K x s x q), A (s x s), gamma (n x K)"""
    eta: np.ndarray
    B: np.ndarray
    A: np.ndarray
    gamma: np.ndarray
    hyper: CovRegPrior = field(default_factory=CovRegPrior)

    def __post_init__(self):
        eta = _frozen_array(self.eta, ndim=2, name='eta')
        B = _frozen_array(self.B, ndim=3, name='B')
        A = _frozen_array(self.A, ndim=2, name='A')
        gamma = _frozen_array(self.gamma, ndim=2, name='gamma')
        q, s = eta.shape
        if B.shape[1:] != (s, q) or A.shape != (s, s) or gamma.shape[1] != B.shape[0]:
            raise DataError(
                f"inconsistent state dims: eta {eta.shape}, B {B.shape}, A {A.shape}, gamma {gamma.shape}"
            )
        for name, value in (('eta', eta), ('B', B), ('A', A), ('gamma', gamma)):
            object.__setattr__(self, name, value)

    @property
    def q(self):
        return self.eta.shape[0]

    @property
    def s(self):
        return self.eta.shape[1]

    @property
    def K(self):
        return self.B.shape[0]

    @property
    def n(self):
        return self.gamma.shape[0]


@dataclass(frozen=True, eq=False)
class CovRegDraw:
    """A retained posterior draw of (eta, B, A)"""
    iteration: int
    eta: np.ndarray
    B: np.ndarray
    A: np.ndarray
    log_posterior: float


@dataclass(frozen=True, eq=False)
class CovRegSamples:
    """Retained draws, pooled over chains in chain order"""
    draws: Tuple[CovRegDraw, ...]
    final_states: Tuple[CovRegState, ...] = ()

    def __len__(self):
        return len(self.draws)

    @property
    def is_empty(self):
        return len(self.draws) == 0


# ========================================
# MCEM
# ========================================

@dataclass(frozen=True)
class McmcSchedule:
    """E-step budget: a cold first chain, then warm-started shorter chains"""
    n_iter: int = 2000
    burn: int = 1000
    thin: int = 1
    chains: int = 1
    warm_n_iter: int = 500
    warm_burn: int = 100

    def __post_init__(self):
        if self.n_iter <= self.burn or self.warm_n_iter <= self.warm_burn:
            raise ConfigError("n_iter must exceed burn for both cold and warm chains")
        if self.burn < 0 or self.warm_burn < 0 or self.thin < 1 or self.chains < 1:
            raise ConfigError("burn must be >= 0, thin and chains must be >= 1")


@dataclass(frozen=True)
class FitConfig:
    """Loop controls for the Monte Carlo EM subspace fit"""
    s: int = 0
    K: int = 1
    em_max_iters: int = 50
    em_tol: float = 1e-3
    mcmc: McmcSchedule = field(default_factory=McmcSchedule)
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(max_iters=100, grad_tol=1e-6, rel_tol=1e-10)
    )
    priors: PriorConfig = field(default_factory=PriorConfig)
    covreg: CovRegPrior = field(default_factory=CovRegPrior)
    objective: str = 'spiked'
    seed: int = 0
    threads: int = 1

    OBJECTIVE_CHOICES = ('spiked', 'inverse_wishart')

    def __post_init__(self):
        if self.s < 0 or self.K < 0 or self.em_max_iters < 0:
            raise ConfigError("s, K and em_max_iters must be nonnegative")
        if not self.em_tol > 0:
            raise ConfigError("em_tol must be positive")
        if self.objective not in self.OBJECTIVE_CHOICES:
            raise ConfigError(f"objective must be one of {', '.join(self.OBJECTIVE_CHOICES)}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass(frozen=True)
class FitTraceEntry:
    """One EM iteration: final M-step objective, projector step, inner ascent trace"""
    iteration: int
    objective: float
    step: float
    sigma2: float
    objectives: Tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class EnvelopeFit:
    """Fitted envelope basis, noise level and projected-data posterior draws"""
    V_hat: StiefelBasis
    sigma2_hat: float
    samples: CovRegSamples
    trace: Tuple[FitTraceEntry, ...]
    config: FitConfig
    center: np.ndarray
    converged: bool = False
    dimension_forced: bool = False

    def __post_init__(self):
        if not self.sigma2_hat > 0:
            raise NumericalError("sigma2_hat must be positive")
        object.__setattr__(self, 'center', _frozen_array(self.center, ndim=1, name='center'))

    @property
    def p(self):
        return self.V_hat.p

    @property
    def s(self):
        return self.V_hat.s

    @property
    def iterations(self):
        return len(self.trace)


# ========================================
# SIMULATION AND EVALUATION
# ========================================

@dataclass(frozen=True)
class SimConfig:
    """Dimensions and signal scales of the simulation model"""
    n: int = 100
    p: int = 25
    s: int = 4
    q: int = 4
    tau: float = 3.0
    sigma2: float = 1.0
    K: Optional[int] = None  # rank terms; None means K = q
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.p, self.s, self.q) < 1:
            raise ConfigError("n, p, s and q must be positive")
        if self.s > self.p:
            raise ConfigError("s must be <= p")
        if self.tau < 0 or not self.sigma2 > 0:
            raise ConfigError("tau must be >= 0 and sigma2 > 0")
        if self.K is not None and self.K < 0:
            raise ConfigError("K must be nonnegative")

    @property
    def rank_terms(self):
        return self.q if self.K is None else self.K


@dataclass(frozen=True, eq=False)
class SimTruth:
    """Ground truth behind a simulated data set"""
    V: StiefelBasis
    eta: np.ndarray
    Gamma: np.ndarray
    sigma2: float
    Psi: np.ndarray


@dataclass(frozen=True)
class ExperimentRow:
    """Mean percentage increase in Stein's loss for one setting"""
    experiment: str
    param: int
    mean_pct_increase: float
    ci_lo: float
    ci_hi: float
    M: int
    boot_se: float = 0.0


@dataclass(frozen=True)
class EigenSample:
    """Largest eigenvalue and principal-axis angle of one projected draw"""
    draw: int
    lambda1: float
    angle: float
