"""
marshmallow schemas for the JSON artifacts: fit.json, samples.json, truth.json.

Arrays are stored as row-major nested lists. Python's float repr is exact,
so dump -> load -> dump reproduces the same document.
"""
import numpy as np
from marshmallow import Schema, ValidationError, fields, post_load, validate

from .models import (
    CovRegDraw,
    CovRegPrior,
    CovRegSamples,
    FitConfig,
    FitTraceEntry,
    McmcSchedule,
    OptimizerConfig,
    PriorConfig,
    SimConfig,
    StiefelBasis,
)

SCHEMA_VERSION = 1


def _check_version(value):
    if value != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {value!r}, expected {SCHEMA_VERSION}")
    return value


class Matrix(fields.Field):
    """numpy array <-> nested lists of floats"""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        if isinstance(value, StiefelBasis):
            value = value.matrix
        return np.asarray(value, dtype=float).tolist()

    def _deserialize(self, value, attr, data, **kwargs):
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"not a numeric array: {e}") from e
        if arr.dtype == object:
            raise ValidationError("ragged array")
        return arr


class Scale(fields.Field):
    """Prior scale: a number or a square matrix"""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        if np.ndim(value) == 0:
            return float(value)
        return np.asarray(value, dtype=float).tolist()

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, list):
            return np.asarray(value, dtype=float)
        raise ValidationError("expected a number or a matrix")


# ========================================
# CONFIG ECHO
# ========================================

class McmcScheduleSchema(Schema):
    n_iter = fields.Integer(required=True)
    burn = fields.Integer(required=True)
    thin = fields.Integer(required=True)
    chains = fields.Integer(required=True)
    warm_n_iter = fields.Integer(required=True)
    warm_burn = fields.Integer(required=True)

    @post_load
    def make(self, data, **kwargs):
        return McmcSchedule(**data)


class OptimizerConfigSchema(Schema):
    max_iters = fields.Integer(required=True)
    grad_tol = fields.Float(required=True)
    step_init = fields.Float(required=True)
    armijo_c = fields.Float(required=True)
    backtrack_factor = fields.Float(required=True)
    nonmonotone_window = fields.Integer(required=True)
    rel_tol = fields.Float(required=True)

    @post_load
    def make(self, data, **kwargs):
        return OptimizerConfig(**data)


class PriorConfigSchema(Schema):
    U0 = Scale(required=True)
    nu0 = fields.Float(required=True)
    U1 = Scale(required=True)
    nu1 = fields.Float(required=True)
    Lambda0 = Scale(required=True)
    alpha = fields.Float(required=True)
    kappa = fields.Float(required=True)

    @post_load
    def make(self, data, **kwargs):
        return PriorConfig(**data)


class CovRegPriorSchema(Schema):
    tau_eta2 = fields.Float(required=True)
    tau_B2 = fields.Float(required=True)
    S_A = Matrix(allow_none=True, load_default=None)
    nu_A = fields.Float(allow_none=True, load_default=None)
    mean_model = fields.Boolean(required=True)

    @post_load
    def make(self, data, **kwargs):
        return CovRegPrior(**data)


class FitConfigSchema(Schema):
    s = fields.Integer(required=True)
    K = fields.Integer(required=True)
    em_max_iters = fields.Integer(required=True)
    em_tol = fields.Float(required=True)
    mcmc = fields.Nested(McmcScheduleSchema, required=True)
    optimizer = fields.Nested(OptimizerConfigSchema, required=True)
    priors = fields.Nested(PriorConfigSchema, required=True)
    covreg = fields.Nested(CovRegPriorSchema, required=True)
    objective = fields.String(required=True, validate=validate.OneOf(FitConfig.OBJECTIVE_CHOICES))
    seed = fields.Integer(required=True)
    threads = fields.Integer(required=True)

    @post_load
    def make(self, data, **kwargs):
        return FitConfig(**data)


# ========================================
# FIT AND SAMPLES
# ========================================

class FitTraceEntrySchema(Schema):
    iteration = fields.Integer(required=True)
    objective = fields.Float(required=True)
    step = fields.Float(required=True)
    sigma2 = fields.Float(required=True)
    objectives = fields.List(fields.Float(), required=True)

    @post_load
    def make(self, data, **kwargs):
        data['objectives'] = tuple(data['objectives'])
        return FitTraceEntry(**data)


class FitSchema(Schema):
    """fit.json; the posterior draws live in the samples file it names"""
    schema_version = fields.Function(lambda obj: SCHEMA_VERSION, deserialize=_check_version, required=True)
    V_hat = Matrix(required=True)
    sigma2_hat = fields.Float(required=True)
    center = Matrix(required=True)
    converged = fields.Boolean(required=True)
    dimension_forced = fields.Boolean(load_default=False)
    trace = fields.List(fields.Nested(FitTraceEntrySchema), required=True)
    config = fields.Nested(FitConfigSchema, required=True)
    samples_file = fields.String(required=True)


class CovRegDrawSchema(Schema):
    iteration = fields.Integer(required=True)
    eta = Matrix(required=True)
    B = Matrix(required=True)
    A = Matrix(required=True)
    log_posterior = fields.Float(required=True)

    @post_load
    def make(self, data, **kwargs):
        return CovRegDraw(**data)


class SampleSetSchema(Schema):
    schema_version = fields.Function(lambda obj: SCHEMA_VERSION, deserialize=_check_version, required=True)
    draws = fields.List(fields.Nested(CovRegDrawSchema), required=True)

    @post_load
    def make(self, data, **kwargs):
        return CovRegSamples(draws=tuple(data['draws']))


# ========================================
# SIMULATION TRUTH
# ========================================

class SimConfigSchema(Schema):
    n = fields.Integer(required=True)
    p = fields.Integer(required=True)
    s = fields.Integer(required=True)
    q = fields.Integer(required=True)
    tau = fields.Float(required=True)
    sigma2 = fields.Float(required=True)
    K = fields.Integer(allow_none=True, load_default=None)
    seed = fields.Integer(required=True)

    @post_load
    def make(self, data, **kwargs):
        return SimConfig(**data)


class TruthManifestSchema(Schema):
    """truth.json written next to a simulated data set"""
    schema_version = fields.Function(lambda obj: SCHEMA_VERSION, deserialize=_check_version, required=True)
    config = fields.Nested(SimConfigSchema, required=True)
    V = Matrix(required=True)
    eta = Matrix(required=True)
    Gamma = Matrix(required=True)
    sigma2 = fields.Float(required=True)
    Psi = Matrix(required=True)
