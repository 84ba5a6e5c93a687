"""Synthetic data-generating processes, the forward-simulation oracle, and scoring.

Three generators share a mixed response block (continuous, binary, count with
integer cutpoints, 3-category nominal; latent dimension 5) and one binary
covariate; every subject reports at three of nine time points, one drawn
uniformly from each consecutive triple {3j-2, 3j-1, 3j}.

  * case 1: latent factor loadings follow a matrix random walk that jumps at
    t = 4 and t = 7; y* = D xt + F_t xt eta + eps with xt = (1, x)',
    eta ~ N(0,1), noise sd 0.1, and all matrix entries i.i.d. N(0, 0.05^2).
  * case 2: covariance regression in z = (1, x, t/T, (t/T)^2)' with two
    latent subgroups s ~ Bernoulli(0.5); noise sd 0.1 for s=0 and 0.05 for s=1.
  * case 3: the case-2 structure per stratum of a finite population with
    strata sizes (650000, 300000, 50000); 1500 subjects sampled per stratum,
    design weights N_m / n_m, noise sd 0.1.

"True" gamma values have no closed form, so the oracle forward-simulates a
large population sample on the full grid and counts concordances directly.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import links
from .association import (
    association_pairs,
    column_matrix,
    concordance_counts_fast,
    expand_columns,
    _gamma_from_counts,
)
from .dataset import PanelDataset
from .schema import CovariateSchema, LatentLayout, SubpopulationQuery, VariableSchema

SIM_VARIABLES = (
    VariableSchema(name="y_cont", kind="continuous"),
    VariableSchema(name="y_bin", kind="binary"),
    VariableSchema(name="y_count", kind="count", cutpoint_style="integer"),
    VariableSchema(name="y_nom", kind="nominal", categories=("1", "2", "3")),
)
SIM_COVARIATES = (CovariateSchema(name="x", kind="binary"),)

_P = 5            # latent dimension of the response block
_T = 9            # time grid 1..9
_WAVES = 3
CASE3_STRATA = (650_000, 300_000, 50_000)
CASE3_PER_STRATUM = 1500
MATRIX_SD = 0.05


@dataclass
class DgpSpec:
    """A fully realised generator: case id, sizes, seed and drawn matrices."""

    case: int
    n: int
    seed: int
    matrices: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        doc = {
            "case": self.case, "n": self.n, "seed": self.seed,
            "matrices": {k: np.asarray(v).tolist() for k, v in self.matrices.items()},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, path) -> "DgpSpec":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            case=int(doc["case"]), n=int(doc["n"]), seed=int(doc["seed"]),
            matrices={k: np.asarray(v, dtype=float) for k, v in doc["matrices"].items()},
        )


def make_spec(case: int, n: int, seed: int) -> DgpSpec:
    """Draw and freeze the generator matrices for one (case, n, seed)."""
    if case not in (1, 2, 3):
        raise ValueError("case must be 1, 2 or 3")
    if case == 3:
        if n % len(CASE3_STRATA):
            raise ValueError("case 3 sample size must split evenly across 3 strata")
    elif n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng([seed, case, 0])
    mats = {}
    if case == 1:
        mats["D"] = rng.normal(0.0, MATRIX_SD, size=(_P, 2))
        F = rng.normal(0.0, MATRIX_SD, size=(_P, 2))     # F_0, random-walk start
        steps = []
        for t in range(1, _T + 1):
            if t in (4, 7):
                F = F + rng.normal(0.0, MATRIX_SD, size=(_P, 2))
            steps.append(F.copy())
        mats["F"] = np.stack(steps)                      # (T, p, 2)
    else:
        groups = 2 if case == 2 else 3
        for g in range(groups):
            mats[f"D{g}"] = rng.normal(0.0, MATRIX_SD, size=(_P, 4))
            mats[f"F{g}"] = rng.normal(0.0, MATRIX_SD, size=(_P, 4))
    return DgpSpec(case=case, n=n, seed=seed, matrices=mats)


def _wave_times(rng, n: int) -> np.ndarray:
    """(n, 3) observation times: one uniform pick per consecutive triple."""
    offsets = rng.integers(0, 3, size=(n, _WAVES))
    base = np.array([1, 4, 7])
    return base[None, :] + offsets


def _latent_means(spec: DgpSpec, x, group, times, eta):
    """(n, W, p) latent means including the factor term, excluding noise.

    `x`, `group`, `eta` are (n,) subject-level; `times` is (n, W).
    """
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float)
    n, W = times.shape
    if spec.case == 1:
        xt = np.stack([np.ones(n), x], axis=1)                   # (n, 2)
        fixed = xt @ spec.matrices["D"].T                        # (n, p)
        Ft = spec.matrices["F"][times.astype(int) - 1]           # (n, W, p, 2)
        load = np.einsum("nwpl,nl->nwp", Ft, xt)
        return fixed[:, None, :] + load * eta[:, None, None]
    tt = times / _T
    z = np.stack([np.ones((n, W)), np.broadcast_to(x[:, None], (n, W)), tt, tt * tt],
                 axis=-1)                                        # (n, W, 4)
    D = np.stack([spec.matrices[f"D{g}"] for g in range(_n_groups(spec))])[group]
    F = np.stack([spec.matrices[f"F{g}"] for g in range(_n_groups(spec))])[group]
    fixed = np.einsum("npl,nwl->nwp", D, z)
    load = np.einsum("npl,nwl->nwp", F, z)
    return fixed + load * eta[:, None, None]


def _n_groups(spec: DgpSpec) -> int:
    return {1: 1, 2: 2, 3: 3}[spec.case]


def _noise_sd(spec: DgpSpec, group: np.ndarray) -> np.ndarray:
    if spec.case == 2:
        return np.where(group == 1, 0.05, 0.1)
    return np.full(np.shape(group), 0.1)


def generate(spec: DgpSpec, rng) -> PanelDataset:
    """Draw a survey sample from the generator (3 waves per subject)."""
    n = spec.n
    x = rng.integers(0, 2, size=n)
    if spec.case == 1:
        group = np.zeros(n, dtype=np.int64)
        weights = np.ones(n)
        population = n
    elif spec.case == 2:
        group = rng.integers(0, 2, size=n)
        weights = np.ones(n)
        population = n
    else:
        per = n // len(CASE3_STRATA)
        group = np.repeat(np.arange(len(CASE3_STRATA)), per)
        weights = np.asarray(CASE3_STRATA, dtype=float)[group] / per
        population = int(sum(CASE3_STRATA))
    eta = rng.standard_normal(n)
    times = _wave_times(rng, n)                       # (n, 3)

    mean = _latent_means(spec, x, group, times, eta)  # (n, 3, p)
    sd = _noise_sd(spec, group)[:, None, None]
    ystar = mean + sd * rng.standard_normal((n, _WAVES, _P))
    layout = LatentLayout.from_schema(SIM_VARIABLES)
    codes = links.to_observed(ystar, layout)          # (n, 3, n_vars)

    ids = [f"s{i+1:06d}" for i in range(n)]
    obs_subject = np.repeat(np.arange(n), _WAVES)
    obs_time = times.reshape(-1).astype(float)
    responses = codes.reshape(n * _WAVES, len(SIM_VARIABLES))
    return PanelDataset(
        variables=SIM_VARIABLES,
        covariates=SIM_COVARIATES,
        population_size=population,
        ids=ids,
        weights=weights,
        cov_codes=x.reshape(-1, 1).astype(np.int64),
        obs_subject=obs_subject,
        obs_time=obs_time,
        responses=responses,
    )


# --- the forward-simulation oracle -----------------------------------------------

def oracle_gamma(spec: DgpSpec, M: int, query: SubpopulationQuery, rng):
    """Approximate true gamma per (pair, time) by simulating M population subjects.

    Subjects cover the full grid 1..T with no survey design; in case 3 strata
    are drawn proportional to their population sizes.  Returns rows
    (pair, time, subpop_label, gamma) with NaN for undefined cells.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    allowed = query.allowed.get("x")
    if allowed is not None and sorted(allowed) not in ([0], [1], [0, 1]):
        raise ValueError("oracle query can only constrain covariate x")
    if allowed is None or len(allowed) == 2:
        x = rng.integers(0, 2, size=M)
    else:
        x = np.full(M, next(iter(allowed)), dtype=np.int64)

    if spec.case == 1:
        group = np.zeros(M, dtype=np.int64)
    elif spec.case == 2:
        group = rng.integers(0, 2, size=M)
    else:
        shares = np.asarray(CASE3_STRATA, dtype=float)
        cdf = np.cumsum(shares / shares.sum())
        group = np.minimum(np.searchsorted(cdf, rng.random(M), side="right"), 2)
    eta = rng.standard_normal(M)
    times = np.broadcast_to(np.arange(1, _T + 1, dtype=float), (M, _T))

    mean = _latent_means(spec, x, group, times, eta)
    sd = _noise_sd(spec, group)[:, None, None]
    ystar = mean + sd * rng.standard_normal((M, _T, _P))
    layout = LatentLayout.from_schema(SIM_VARIABLES)
    codes = links.to_observed(ystar, layout)

    columns = expand_columns(SIM_VARIABLES)
    pairs = association_pairs(columns)
    mat = column_matrix(codes, columns)
    label = query.label(SIM_COVARIATES)
    rows = []
    for c1, c2 in pairs:
        name = f"{columns[c1][0]}~{columns[c2][0]}"
        for t in range(_T):
            g = _gamma_from_counts(*concordance_counts_fast(mat[:, t, c1], mat[:, t, c2]))
            rows.append({"pair": name, "time": float(t + 1), "subpop": label, "gamma": g})
    return rows


ORACLE_FIELDS = ("pair", "time", "subpop", "gamma")


def write_oracle_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ORACLE_FIELDS)
        for r in rows:
            g = "" if np.isnan(r["gamma"]) else repr(float(r["gamma"]))
            writer.writerow([r["pair"], repr(float(r["time"])), r["subpop"], g])


def read_oracle_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(ORACLE_FIELDS):
            raise ValueError(f"{path}: unexpected oracle header {reader.fieldnames}")
        for row in reader:
            rows.append({
                "pair": row["pair"],
                "time": float(row["time"]),
                "subpop": row["subpop"],
                "gamma": float(row["gamma"]) if row["gamma"] else float("nan"),
            })
    return rows


# --- scoring -------------------------------------------------------------------------

def score_mae(estimate_rows, oracle_rows):
    """Mean absolute gamma error per time point plus the over-cells average.

    Joins estimate and oracle on (pair, time, subpop); a cell contributes when
    both sides are defined.  Returns rows (subpop, time, mae, log_mae,
    n_cells) with time "average" for the per-subpopulation mean over all
    defined cells.
    """
    oracle = {
        (r["pair"], r["time"], r["subpop"]): r["gamma"]
        for r in oracle_rows
        if not np.isnan(r["gamma"])
    }
    cells = {}
    matched = 0
    for r in estimate_rows:
        est = r.get("mean", r.get("gamma"))
        key = (r["pair"], r["time"], r["subpop"])
        if key not in oracle or np.isnan(est):
            continue
        matched += 1
        err = abs(est - oracle[key])
        cells.setdefault(r["subpop"], []).append((r["time"], err))
    if not matched:
        raise ValueError("no overlapping defined (pair, time, subpop) cells")
    out = []
    for subpop in sorted(cells):
        entries = cells[subpop]
        times = sorted({t for t, _ in entries})
        for t in times:
            errs = [e for tt, e in entries if tt == t]
            mae = float(np.mean(errs))
            out.append(_score_row(subpop, t, mae, len(errs)))
        errs = [e for _, e in entries]
        out.append(_score_row(subpop, "average", float(np.mean(errs)), len(errs)))
    return out


def _score_row(subpop, time, mae, n_cells):
    log_mae = float(np.log(mae)) if mae > 0 else float("-inf")
    return {"subpop": subpop, "time": time, "mae": mae, "log_mae": log_mae,
            "n_cells": n_cells}


SCORE_FIELDS = ("subpop", "time", "mae", "log_mae", "n_cells")


def write_score_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_FIELDS)
        for r in rows:
            t = r["time"] if isinstance(r["time"], str) else repr(float(r["time"]))
            writer.writerow([r["subpop"], t, repr(r["mae"]), repr(r["log_mae"]), r["n_cells"]])


def read_score_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(SCORE_FIELDS):
            raise ValueError(f"{path}: unexpected score header {reader.fieldnames}")
        for row in reader:
            t = row["time"]
            rows.append({
                "subpop": row["subpop"],
                "time": t if t == "average" else float(t),
                "mae": float(row["mae"]),
                "log_mae": float(row["log_mae"]),
                "n_cells": int(row["n_cells"]),
            })
    return rows
