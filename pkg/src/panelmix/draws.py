"""Thinned-draw persistence: one self-describing file per chain.

Layout: a single JSON header line (schema, dimensions, config, hashes), then
fixed-size binary records appended per saved sweep.  Every field is written
little-endian, so identical runs produce byte-identical files; the reader
infers the record count from the file size.

A record is self-contained for posterior-predictive simulation: adjusted and
unadjusted mixture weights, all component parameters, the global time effects
and the covariate multinomials.
"""

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .schema import CovariateSchema, VariableSchema

MAGIC = "panelmix-draws"
VERSION = 1


@dataclass
class DrawRecord:
    """One saved sweep; array shapes as in the header dimensions."""

    iteration: int
    pi_tilde: np.ndarray     # (H,) survey-adjusted mixture weights
    pi: np.ndarray           # (H,) unadjusted stick-breaking weights
    U: np.ndarray            # (H, p, L*)
    V: np.ndarray            # (H, Q, L)
    sigma2: np.ndarray       # (H, p)
    theta_x: list            # per covariate (H, d_l)
    mu: np.ndarray           # (T, Q_mu)
    xi: np.ndarray           # (T, Q, Q_eta)
    kappa_mu: float
    kappa_xi: float
    alpha: float


@dataclass
class DrawsMeta:
    """Parsed header of a draws file."""

    variables: tuple
    covariates: tuple
    population_size: int
    n_subjects: int
    time_grid: np.ndarray
    dims: dict               # H, p, L, Lstar, Q, Q_mu, Q_eta, T
    config: dict
    config_hash: str
    schema_hash: str
    chain_seed: list

    @property
    def H(self) -> int:
        return self.dims["H"]


def schema_fingerprint(variables, covariates, population_size: int) -> str:
    doc = {
        "population_size": int(population_size),
        "responses": [
            {"name": v.name, "kind": v.kind, "categories": list(v.categories),
             "cutpoint_style": v.cutpoint_style}
            for v in variables
        ],
        "covariates": [
            {"name": c.name, "kind": c.kind, "categories": list(c.categories)}
            for c in covariates
        ],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _record_sizes(dims, covariate_dims):
    H, p, Lstar = dims["H"], dims["p"], dims["Lstar"]
    Q, L, T, Q_mu, Q_eta = dims["Q"], dims["L"], dims["T"], dims["Q_mu"], dims["Q_eta"]
    n_floats = (
        2 * H + H * p * Lstar + H * Q * L + H * p
        + sum(H * d for d in covariate_dims)
        + T * Q_mu + T * Q * Q_eta + 3
    )
    return 8 + 8 * n_floats, n_floats


class DrawsWriter:
    """Append-only writer; call close() (or use as a context manager)."""

    def __init__(self, path, meta: DrawsMeta):
        self.meta = meta
        self._cov_dims = [c.n_categories for c in meta.covariates]
        header = {
            "magic": MAGIC,
            "version": VERSION,
            "population_size": meta.population_size,
            "n_subjects": meta.n_subjects,
            "responses": [
                {"name": v.name, "kind": v.kind, "categories": list(v.categories),
                 "cutpoint_style": v.cutpoint_style}
                for v in meta.variables
            ],
            "covariates": [
                {"name": c.name, "kind": c.kind, "categories": list(c.categories)}
                for c in meta.covariates
            ],
            "time_grid": [float(t) for t in meta.time_grid],
            "dims": meta.dims,
            "config": meta.config,
            "config_hash": meta.config_hash,
            "schema_hash": meta.schema_hash,
            "chain_seed": meta.chain_seed,
        }
        self._fh = open(path, "wb")
        self._fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")

    def append(self, rec: DrawRecord) -> None:
        parts = [
            np.asarray(rec.pi_tilde, dtype="<f8").ravel(),
            np.asarray(rec.pi, dtype="<f8").ravel(),
            np.asarray(rec.U, dtype="<f8").ravel(),
            np.asarray(rec.V, dtype="<f8").ravel(),
            np.asarray(rec.sigma2, dtype="<f8").ravel(),
        ]
        parts.extend(np.asarray(t, dtype="<f8").ravel() for t in rec.theta_x)
        parts.extend([
            np.asarray(rec.mu, dtype="<f8").ravel(),
            np.asarray(rec.xi, dtype="<f8").ravel(),
            np.asarray([rec.kappa_mu, rec.kappa_xi, rec.alpha], dtype="<f8"),
        ])
        blob = np.concatenate(parts)
        self._fh.write(struct.pack("<q", rec.iteration))
        self._fh.write(blob.tobytes())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_draws(path):
    """Read a draws file; returns (DrawsMeta, list of DrawRecord)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line)
    if header.get("magic") != MAGIC:
        raise ValueError(f"{path}: not a panelmix draws file")
    if header.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported draws version {header.get('version')}")
    variables = tuple(
        VariableSchema(
            name=e["name"], kind=e["kind"], categories=tuple(e["categories"]),
            cutpoint_style=e["cutpoint_style"],
        )
        for e in header["responses"]
    )
    covariates = tuple(
        CovariateSchema(name=e["name"], kind=e["kind"], categories=tuple(e["categories"]))
        for e in header["covariates"]
    )
    meta = DrawsMeta(
        variables=variables,
        covariates=covariates,
        population_size=int(header["population_size"]),
        n_subjects=int(header["n_subjects"]),
        time_grid=np.asarray(header["time_grid"], dtype=float),
        dims=dict(header["dims"]),
        config=dict(header["config"]),
        config_hash=header["config_hash"],
        schema_hash=header["schema_hash"],
        chain_seed=list(header["chain_seed"]),
    )
    cov_dims = [c.n_categories for c in covariates]
    rec_bytes, n_floats = _record_sizes(meta.dims, cov_dims)
    if len(payload) % rec_bytes:
        raise ValueError(f"{path}: truncated draws file")
    d = meta.dims
    H, p, Lstar, Q, L = d["H"], d["p"], d["Lstar"], d["Q"], d["L"]
    T, Q_mu, Q_eta = d["T"], d["Q_mu"], d["Q_eta"]
    records = []
    for off in range(0, len(payload), rec_bytes):
        iteration = struct.unpack_from("<q", payload, off)[0]
        flat = np.frombuffer(payload, dtype="<f8", count=n_floats, offset=off + 8)
        pos = 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            out = flat[pos : pos + size].reshape(shape).copy()
            pos += size
            return out

        pi_tilde = take((H,))
        pi = take((H,))
        U = take((H, p, Lstar))
        V = take((H, Q, L))
        sigma2 = take((H, p))
        theta_x = [take((H, dl)) for dl in cov_dims]
        mu = take((T, Q_mu))
        xi = take((T, Q, Q_eta))
        kappa_mu, kappa_xi, alpha = flat[pos], flat[pos + 1], flat[pos + 2]
        records.append(
            DrawRecord(
                iteration=int(iteration), pi_tilde=pi_tilde, pi=pi, U=U, V=V,
                sigma2=sigma2, theta_x=theta_x, mu=mu, xi=xi,
                kappa_mu=float(kappa_mu), kappa_xi=float(kappa_xi), alpha=float(alpha),
            )
        )
    return meta, records
