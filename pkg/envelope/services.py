"""
File services used by the management commands: CSV matrices, JSON
artifacts and YAML run configuration.
"""
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from marshmallow import ValidationError

from .exceptions import ConfigError, DataError, EnvelopeError
from .models import CovRegSamples, EnvelopeFit, SimTruth, StiefelBasis
from .schemas import FitSchema, SampleSetSchema, TruthManifestSchema

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
FIT_FILE = 'fit.json'
SAMPLES_FILE = 'samples.json'
TRUTH_FILE = 'truth.json'


# ========================================
# CSV
# ========================================

def read_matrix(path, name=None):
    """
    Read a numeric CSV with a header row into an n x m array.

    Args:
        path: CSV file path
        name: label used in error messages (defaults to the file name)

    Returns:
        tuple: (array, list of column names)
    """
    path = Path(path)
    name = name or path.name
    if not path.is_file():
        raise DataError(f"{name}: file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"{name}: cannot parse CSV: {e}") from e

    values = np.empty(frame.shape, dtype=float)
    for col, column in enumerate(frame.columns):
        numeric = pd.to_numeric(frame[column].str.strip(), errors='coerce').to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(numeric))
        if bad.size:
            row = int(bad[0])
            raise DataError(
                f"{name}: malformed value {frame.iat[row, col]!r} at row {row + 1}, "
                f"column {column!r}"
            )
        values[:, col] = numeric
    logger.debug(f"read {name}: {values.shape[0]} x {values.shape[1]}")
    return values, list(frame.columns)


def write_matrix(path, matrix, prefix):
    """Write a matrix with header prefix1..prefixM and 17 significant digits."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    columns = [f"{prefix}{j + 1}" for j in range(matrix.shape[1])]
    return write_table(path, pd.DataFrame(matrix, columns=columns))


def write_table(path, frame):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n', encoding='utf-8')
    logger.info(f"wrote {path}")
    return path


# ========================================
# JSON
# ========================================

def dump_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + '\n', encoding='utf-8')
    logger.info(f"wrote {path}")
    return path


def _load_json(path, schema, what):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataError(f"{what} is not valid JSON: {e}") from e
    try:
        return schema.load(payload)
    except ValidationError as e:
        raise DataError(f"{what} does not match its schema: {e.messages}") from e
    except EnvelopeError as e:
        raise DataError(f"{what} holds invalid values: {e}") from e


def save_fit(fit, directory):
    """
    Write fit.json and samples.json into ``directory``.

    Returns:
        Path of fit.json
    """
    directory = Path(directory)
    dump_json(directory / SAMPLES_FILE, SampleSetSchema().dump({'draws': fit.samples.draws}))
    document = FitSchema().dump({
        'V_hat': fit.V_hat,
        'sigma2_hat': fit.sigma2_hat,
        'center': fit.center,
        'converged': fit.converged,
        'dimension_forced': fit.dimension_forced,
        'trace': fit.trace,
        'config': fit.config,
        'samples_file': SAMPLES_FILE,
    })
    return dump_json(directory / FIT_FILE, document)


def _shape_draws(samples, s, K):
    """Restore the (q x s) and (K x s x q) shapes that empty arrays lose in JSON."""
    draws = []
    for draw in samples.draws:
        try:
            eta = draw.eta.reshape(-1, s)
            B = draw.B.reshape(K, s, eta.shape[0])
            A = draw.A.reshape(s, s)
        except ValueError as e:
            raise DataError(f"samples file draw {draw.iteration} does not match s={s}, K={K}: {e}") from e
        draws.append(replace(draw, eta=eta, B=B, A=A))
    return CovRegSamples(draws=tuple(draws))


def load_fit(path):
    """Read fit.json (a file or the directory holding it) and its samples file."""
    path = Path(path)
    if path.is_dir():
        path = path / FIT_FILE
    data = _load_json(path, FitSchema(), 'fit file')
    samples = _load_json(path.parent / data['samples_file'], SampleSetSchema(), 'samples file')
    try:
        V_hat = StiefelBasis(data['V_hat'])
    except EnvelopeError as e:
        raise DataError(f"fit file holds an invalid basis: {e}") from e
    if data['center'].shape != (V_hat.p,):
        raise DataError(f"fit file center has shape {data['center'].shape}, expected ({V_hat.p},)")
    return EnvelopeFit(
        V_hat=V_hat,
        sigma2_hat=data['sigma2_hat'],
        samples=_shape_draws(samples, V_hat.s, data['config'].K),
        trace=tuple(data['trace']),
        config=data['config'],
        center=data['center'],
        converged=data['converged'],
        dimension_forced=data['dimension_forced'],
    )


def save_truth(config, truth, directory):
    document = TruthManifestSchema().dump({
        'config': config,
        'V': truth.V,
        'eta': truth.eta,
        'Gamma': truth.Gamma,
        'sigma2': truth.sigma2,
        'Psi': truth.Psi,
    })
    return dump_json(Path(directory) / TRUTH_FILE, document)


def load_truth(path):
    """
    Returns:
        tuple: (SimConfig, SimTruth)
    """
    path = Path(path)
    if path.is_dir():
        path = path / TRUTH_FILE
    data = _load_json(path, TruthManifestSchema(), 'truth manifest')
    config = data['config']
    s, q = config.s, config.q
    try:
        truth = SimTruth(
            V=StiefelBasis(data['V']),
            eta=data['eta'].reshape(q, s),
            Gamma=data['Gamma'].reshape(config.rank_terms, s, q),
            sigma2=data['sigma2'],
            Psi=data['Psi'].reshape(config.n, s, s),
        )
    except (ValueError, EnvelopeError) as e:
        raise DataError(f"truth manifest arrays do not match its dimensions: {e}") from e
    if truth.V.matrix.shape != (config.p, s):
        raise DataError(f"truth manifest basis is {truth.V.matrix.shape}, expected ({config.p}, {s})")
    return config, truth


# ========================================
# RUN CONFIGURATION
# ========================================

def load_config_file(path):
    """
    Parse a YAML run configuration: a mapping of section name -> mapping of values.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = yaml.safe_load(path.read_text(encoding='utf-8'))
    except yaml.YAMLError as e:
        raise ConfigError(f"config file is not valid YAML: {e}") from e
    if payload is None:
        return {}
    if not isinstance(payload, dict) or not all(isinstance(v, dict) for v in payload.values()):
        raise ConfigError("config file must map section names to key/value mappings")
    return payload
