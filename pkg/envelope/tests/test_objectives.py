import numpy as np
from django.test import SimpleTestCase
from scipy import integrate, special

from envelope.exceptions import ConfigError, DataError, NumericalError
from envelope.models import PosteriorMoments, PriorConfig, ProjectedParams
from envelope.objectives import (
    OBJECTIVES,
    cook_objective,
    general_marginal_loglik,
    regression_residual,
    response_envelope_coefficients,
    response_envelope_loglik,
    shared_subspace_loglik,
    spiked_marginal_loglik,
)

from .helpers import random_basis, random_orthogonal, random_spd


def angle_basis(theta):
    return np.array([[np.cos(theta)], [np.sin(theta)]])


def angle_complement(theta):
    return np.array([[-np.sin(theta)], [np.cos(theta)]])


def log_integral(log_density, lo=-25.0, hi=25.0):
    """log of the integral over t > 0 of exp(log_density(t)), taken in u = log t."""
    grid = np.linspace(lo, hi, 2001)
    logs = np.array([log_density(np.exp(u)) + u for u in grid])
    shift = logs.max()
    value, _ = integrate.quad(
        lambda u: np.exp(log_density(np.exp(u)) + u - shift), lo, hi,
        points=[grid[logs.argmax()]], epsabs=0.0, epsrel=1e-11, limit=500,
    )
    return np.log(value) + shift


def inverse_gamma_logpdf(t, shape, scale):
    return shape * np.log(scale) - special.gammaln(shape) - (shape + 1) * np.log(t) - scale / t


def normal_logpdf(x, mean, var):
    return -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)


def random_params(rng, n, s):
    phi = rng.standard_normal((n, s))
    psi_inv = np.stack([np.linalg.inv(random_spd(rng, s)) for _ in range(n)])
    return ProjectedParams(phi=phi, psi_inv=psi_inv)


def rotated_params(params, R):
    return ProjectedParams(
        phi=params.phi @ R,
        psi_inv=np.einsum('ts,ntu,uv->nsv', R, params.psi_inv, R),
    )


class OracleMixin:
    def assertConstantOffset(self, implemented, oracle, tol):
        offsets = np.asarray(implemented) - np.asarray(oracle)
        self.assertLess(np.max(np.abs(offsets - offsets.mean())), tol)


class GeneralMarginalTests(OracleMixin, SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(10)
        self.Y = rng.standard_normal((3, 2))
        self.psi = 2.0
        self.params = ProjectedParams(phi=rng.standard_normal((3, 1)), psi_inv=np.full((3, 1, 1), 1 / self.psi))
        self.U0, self.nu0 = 1.5, 3.0

    def oracle(self, theta):
        z = self.Y @ angle_basis(theta)[:, 0]
        w = self.Y @ angle_complement(theta)[:, 0]
        phi = self.params.phi[:, 0]
        material = np.sum(normal_logpdf(z, phi, self.psi))

        def log_density(t):
            return np.sum(normal_logpdf(w, 0.0, t)) + inverse_gamma_logpdf(t, self.nu0 / 2, self.U0 / 2)

        return material + log_integral(log_density)

    def test_matches_quadrature(self):
        thetas = [0.1, 0.7, 1.3, 2.2]
        implemented = [
            general_marginal_loglik(self.Y, None, angle_basis(t), self.params, self.U0, self.nu0)
            for t in thetas
        ]
        self.assertConstantOffset(implemented, [self.oracle(t) for t in thetas], 1e-6)

    def test_identity_form_matches_explicit_complement(self):
        rng = np.random.default_rng(11)
        Y = rng.standard_normal((20, 5))
        V = random_basis(rng, 5, 2)
        params = random_params(rng, 20, 2)
        U0 = random_spd(rng, 5)
        explicit = general_marginal_loglik(Y, None, V, params, U0, 4.0)
        identity = general_marginal_loglik(Y, None, V, params, U0, 4.0, use_identity=True)
        self.assertAlmostEqual(explicit, identity, delta=1e-9 * max(1.0, abs(explicit)))

    def test_complement_must_be_orthogonal(self):
        V = angle_basis(0.3)
        with self.assertRaises(DataError):
            general_marginal_loglik(self.Y, None, V, self.params, self.U0, self.nu0, Vperp=V)

    def test_joint_rotation_invariance(self):
        rng = np.random.default_rng(12)
        Y = rng.standard_normal((15, 6))
        for _ in range(20):
            V = random_basis(rng, 6, 3)
            R = random_orthogonal(rng, 3)
            params = random_params(rng, 15, 3)
            before = general_marginal_loglik(Y, None, V, params, 1.0, 2.0)
            after = general_marginal_loglik(Y, None, V.matrix @ R, rotated_params(params, R), 1.0, 2.0)
            self.assertAlmostEqual(before, after, delta=1e-10 * max(1.0, abs(before)))


class SpikedMarginalTests(OracleMixin, SimpleTestCase):
    def test_single_observation_value(self):
        params = ProjectedParams(phi=[[0.0]], psi_inv=[[[1.0]]])
        value = spiked_marginal_loglik([[0.0, 1.0]], None, [[1.0], [0.0]], params, alpha=2.0, kappa=1.0)
        self.assertAlmostEqual(value, -2.5 * np.log(1.5), places=12)
        self.assertAlmostEqual(value, -1.01366, places=5)

    def test_matches_quadrature(self):
        rng = np.random.default_rng(13)
        Y = rng.standard_normal((3, 2))
        params = ProjectedParams(phi=rng.standard_normal((3, 1)), psi_inv=np.full((3, 1, 1), 0.8))
        alpha, kappa = 2.0, 1.5

        def oracle(theta):
            z = Y @ angle_basis(theta)[:, 0]
            w = Y @ angle_complement(theta)[:, 0]
            material = np.sum(normal_logpdf(z, params.phi[:, 0], 1 / 0.8))
            return material + log_integral(
                lambda t: np.sum(normal_logpdf(w, 0.0, t)) + inverse_gamma_logpdf(t, alpha, kappa)
            )

        thetas = [0.2, 0.9, 1.6, 2.8]
        implemented = [spiked_marginal_loglik(Y, None, angle_basis(t), params, alpha, kappa) for t in thetas]
        self.assertConstantOffset(implemented, [oracle(t) for t in thetas], 1e-6)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(14)
        Y = rng.standard_normal((12, 5))
        for _ in range(20):
            V = random_basis(rng, 5, 2)
            R = random_orthogonal(rng, 2)
            params = random_params(rng, 12, 2)
            before = spiked_marginal_loglik(Y, None, V, params, 2.0, 1.0)
            after = spiked_marginal_loglik(Y, None, V.matrix @ R, rotated_params(params, R), 2.0, 1.0)
            self.assertAlmostEqual(before, after, delta=1e-10 * max(1.0, abs(before)))

    def test_more_residual_energy_lowers_the_value(self):
        rng = np.random.default_rng(16)
        Y = rng.standard_normal((15, 6))
        V = random_basis(rng, 6, 2).matrix
        params = random_params(rng, 15, 2)
        material = Y @ V @ V.T
        values = [
            spiked_marginal_loglik(material + t * (Y - material), None, V, params, 2.0, 1.0)
            for t in (1.0, 2.0, 3.0)
        ]
        self.assertGreater(values[0], values[1])
        self.assertGreater(values[1], values[2])

    def test_full_basis_has_no_noise_term(self):
        params = ProjectedParams(phi=np.zeros((2, 2)), psi_inv=np.stack([np.eye(2)] * 2))
        with self.assertRaises(ConfigError):
            spiked_marginal_loglik(np.ones((2, 2)), None, np.eye(2), params, 2.0, 1.0)


class ResponseEnvelopeTests(OracleMixin, SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(15)
        self.X = rng.standard_normal((4, 1))
        self.Y = self.X @ np.array([[1.0, -0.5]]) + rng.standard_normal((4, 2))
        self.thetas = [0.15, 0.8, 1.4, 2.5]

    def material_oracle(self, z, U1, nu1, Lambda0):
        """Quadrature over (eta, Psi_1); Lambda0 = 0 means a flat prior on eta."""
        x = self.X[:, 0]

        def integrand(eta, u):
            t = np.exp(u)
            value = np.sum(normal_logpdf(z, x * eta, t))
            if Lambda0 > 0:
                value += normal_logpdf(eta, 0.0, t / Lambda0)
            value += inverse_gamma_logpdf(t, nu1 / 2, U1 / 2) + u
            return np.exp(value)

        total, _ = integrate.dblquad(integrand, -15.0, 15.0, -np.inf, np.inf, epsabs=0.0, epsrel=1e-10)
        return np.log(total)

    def immaterial_oracle(self, w, U0, nu0):
        return log_integral(
            lambda t: np.sum(normal_logpdf(w, 0.0, t)) + inverse_gamma_logpdf(t, nu0 / 2, U0 / 2)
        )

    def check_oracle(self, priors, proper_mean_prior):
        implemented, oracle = [], []
        for theta in self.thetas:
            V = angle_basis(theta)
            implemented.append(response_envelope_loglik(
                self.Y, self.X, V, priors, proper_mean_prior=proper_mean_prior))
            z = self.Y @ V[:, 0]
            w = self.Y @ angle_complement(theta)[:, 0]
            oracle.append(
                self.material_oracle(z, priors.U1, priors.nu1, priors.Lambda0)
                + self.immaterial_oracle(w, priors.U0, priors.nu0)
            )
        self.assertConstantOffset(implemented, oracle, 1e-5)

    def test_flat_mean_prior_matches_quadrature(self):
        self.check_oracle(PriorConfig(U0=1.0, nu0=2.0, U1=1.5, nu1=3.0, Lambda0=0.0), False)

    def test_proper_mean_prior_matches_quadrature(self):
        self.check_oracle(PriorConfig(U0=1.0, nu0=2.0, U1=1.5, nu1=3.0, Lambda0=0.7), True)

    def test_coefficients(self):
        self.assertEqual(response_envelope_coefficients(10, 3, 2.0, 4.0), (5.5, 6.0))
        self.assertEqual(response_envelope_coefficients(10, 3, 2.0, 4.0, proper_mean_prior=True), (7.0, 6.0))

    def test_identity_form_matches_explicit_complement(self):
        rng = np.random.default_rng(16)
        X = rng.standard_normal((25, 2))
        Y = rng.standard_normal((25, 6))
        V = random_basis(rng, 6, 2)
        priors = PriorConfig(U0=random_spd(rng, 6), U1=random_spd(rng, 6), nu0=3.0, nu1=2.0)
        explicit = response_envelope_loglik(Y, X, V, priors)
        identity = response_envelope_loglik(Y, X, V, priors, use_identity=True)
        self.assertAlmostEqual(explicit, identity, delta=1e-9 * max(1.0, abs(explicit)))

    def test_rotation_invariance(self):
        rng = np.random.default_rng(17)
        X = rng.standard_normal((20, 2))
        Y = rng.standard_normal((20, 5))
        priors = PriorConfig()
        for _ in range(20):
            V = random_basis(rng, 5, 2)
            R = random_orthogonal(rng, 2)
            before = response_envelope_loglik(Y, X, V, priors)
            after = response_envelope_loglik(Y, X, V.matrix @ R, priors)
            self.assertAlmostEqual(before, after, delta=1e-10 * max(1.0, abs(before)))

    def test_singular_gram_needs_a_ridge(self):
        with self.assertRaisesMessage(NumericalError, 'choose Lambda0 > 0'):
            regression_residual(np.ones((4, 2)), np.zeros((4, 1)), 0.0)

    def test_requires_covariates(self):
        with self.assertRaises(DataError):
            response_envelope_loglik(self.Y, None, angle_basis(0.3), PriorConfig())

    def test_cook_objective_is_rotation_invariant(self):
        rng = np.random.default_rng(18)
        X = rng.standard_normal((30, 2))
        Y = rng.standard_normal((30, 5))
        V = random_basis(rng, 5, 2)
        R = random_orthogonal(rng, 2)
        before = cook_objective(Y, X, V)
        self.assertAlmostEqual(before, cook_objective(Y, X, V.matrix @ R), delta=1e-10 * max(1.0, abs(before)))


class SharedSubspaceTests(OracleMixin, SimpleTestCase):
    def test_single_group_matches_quadrature(self):
        rng = np.random.default_rng(19)
        Y = rng.standard_normal((3, 2))
        U, nu, alpha, kappa = 1.2, 2.5, 2.0, 1.0

        def oracle(theta):
            z = Y @ angle_basis(theta)[:, 0]
            w = Y @ angle_complement(theta)[:, 0]
            material = log_integral(
                lambda t: np.sum(normal_logpdf(z, 0.0, t)) + inverse_gamma_logpdf(t, nu / 2, U / 2)
            )
            noise = log_integral(
                lambda t: np.sum(normal_logpdf(w, 0.0, t)) + inverse_gamma_logpdf(t, alpha, kappa)
            )
            return material + noise

        thetas = [0.3, 1.1, 1.9, 2.6]
        implemented = [shared_subspace_loglik([Y], angle_basis(t), (U, nu), alpha, kappa) for t in thetas]
        self.assertConstantOffset(implemented, [oracle(t) for t in thetas], 1e-6)

    def test_groups_add_up(self):
        rng = np.random.default_rng(20)
        groups = [rng.standard_normal((8, 4)), rng.standard_normal((5, 4))]
        V = random_basis(rng, 4, 2)
        priors = [(1.0, 3.0), (2.0, 4.0)]
        total = shared_subspace_loglik(groups, V, priors, 2.0, 1.0)
        parts = sum(shared_subspace_loglik([g], V, [prior], 2.0, 1.0) for g, prior in zip(groups, priors))
        self.assertAlmostEqual(total, parts, places=10)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(21)
        groups = [rng.standard_normal((10, 5)), rng.standard_normal((7, 5))]
        for _ in range(20):
            V = random_basis(rng, 5, 2)
            R = random_orthogonal(rng, 2)
            before = shared_subspace_loglik(groups, V, (1.0, 3.0), 2.0, 1.0)
            after = shared_subspace_loglik(groups, V.matrix @ R, (1.0, 3.0), 2.0, 1.0)
            self.assertAlmostEqual(before, after, delta=1e-10 * max(1.0, abs(before)))

    def test_needs_groups(self):
        with self.assertRaises(ConfigError):
            shared_subspace_loglik([], np.eye(3)[:, :1], (1.0, 1.0), 2.0, 1.0)

    def test_prior_count_must_match(self):
        with self.assertRaises(ConfigError):
            shared_subspace_loglik([np.ones((3, 3))], np.eye(3)[:, :1], [(1.0, 1.0)] * 2, 2.0, 1.0)


class GradientTests(SimpleTestCase):
    """Every registered gradient against central finite differences."""

    n, p, s = 20, 8, 2

    def setUp(self):
        rng = np.random.default_rng(22)
        self.rng = rng
        self.Y = rng.standard_normal((self.n, self.p))
        self.X = rng.standard_normal((self.n, 3))
        self.params = random_params(rng, self.n, self.s)
        self.priors = PriorConfig(U0=random_spd(rng, self.p), U1=random_spd(rng, self.p), nu0=3.0, nu1=2.0)
        self.groups = [self.Y[:12], self.Y[12:]]

    def arguments(self, name):
        if name == 'general_marginal':
            return (self.Y, self.X), (self.params, self.priors.U0, self.priors.nu0)
        if name in ('spiked_marginal', 'mstep'):
            return (self.Y, self.X), (self.params if name == 'spiked_marginal' else self.moments(), 2.0, 1.0)
        if name == 'mstep_inverse_wishart':
            return (self.Y, self.X), (self.moments(), self.priors.U0, self.priors.nu0)
        if name == 'response_envelope':
            return (self.Y, self.X), (self.priors,)
        return None, None

    def moments(self):
        return PosteriorMoments.from_params(self.params)

    def closures(self, name):
        pair = OBJECTIVES[name]
        if name == 'shared_subspace':
            priors = [(1.0, 3.0), (self.priors.U1, 4.0)]
            return (lambda V: pair.value(self.groups, V, priors, 2.0, 1.0),
                    lambda V: pair.gradient(self.groups, V, priors, 2.0, 1.0))
        data, extra = self.arguments(name)
        return (lambda V: pair.value(*data, V, *extra),
                lambda V: pair.gradient(*data, V, *extra))

    def test_gradients_match_finite_differences(self):
        h = 1e-6
        for name in OBJECTIVES:
            value, gradient = self.closures(name)
            for trial in range(10):
                with self.subTest(objective=name, trial=trial):
                    V = random_basis(self.rng, self.p, self.s).matrix
                    numeric = np.zeros_like(V)
                    for i in range(self.p):
                        for j in range(self.s):
                            E = np.zeros_like(V)
                            E[i, j] = h
                            numeric[i, j] = (value(V + E) - value(V - E)) / (2 * h)
                    analytic = gradient(V)
                    rel_err = np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic)
                    self.assertLess(rel_err, 1e-5)
