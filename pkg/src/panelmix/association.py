"""Posterior-predictive subjects and rank-association trajectories.

Association between two variables is measured by the concordant/discordant
pair ratio gamma = (N_c - N_d) / (N_c + N_d); ties count for neither side,
which keeps the measure usable for heavily discrete margins.  Nominal
variables enter as per-category 0/1 indicators since their categories carry
no order.

`gk_gamma_exact` enumerates all pairs (the quadratic oracle); `gk_gamma_fast`
counts the same quantities with a lexicographic sort plus a vectorised
merge-sort inversion count and must return bit-identical results.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import links
from .dataset import encode_code_rows
from .schema import LatentLayout, SubpopulationQuery


class EmptySubpopulationError(ValueError):
    """No mixture component gives the queried covariate set positive mass."""


# --- predictive simulation ----------------------------------------------------

@dataclass
class PredictiveDraw:
    """R synthetic subjects observed on the full time grid."""

    component: np.ndarray    # (R,)
    cov_codes: np.ndarray    # (R, n_cov)
    responses: np.ndarray    # (R, T, n_vars) observed codes


def predictive_subjects(record, meta, query: SubpopulationQuery, R: int, rng,
                        weight_mode: str = "adjusted") -> PredictiveDraw:
    """Simulate R subjects from one saved sweep, conditioned on x in C.

    Components are drawn proportional to pi_h * P(x in C | h), covariates
    from the component multinomials restricted to C, subject factors from
    their priors, and responses through the links at every grid time.
    """
    if R < 2:
        raise ValueError("R must be >= 2")
    if weight_mode == "adjusted":
        pi = record.pi_tilde
    elif weight_mode == "unadjusted":
        pi = record.pi
    else:
        raise ValueError(f"unknown weight_mode {weight_mode!r}")

    variables, covariates = meta.variables, meta.covariates
    layout = LatentLayout.from_schema(variables)
    d = meta.dims
    H, L, Q_mu = d["H"], d["L"], d["Q_mu"]
    time_grid = meta.time_grid
    T = time_grid.size

    cov_masks = []
    for c in covariates:
        allowed = query.allowed.get(c.name)
        mask = np.zeros(c.n_categories, dtype=bool)
        if allowed:
            mask[sorted(allowed)] = True
        else:
            mask[:] = True
        cov_masks.append(mask)

    mass = pi.copy()
    for theta, mask in zip(record.theta_x, cov_masks):
        mass = mass * (theta[:, mask].sum(axis=1))
    total = mass.sum()
    if not total > 0:
        raise EmptySubpopulationError("query has zero predictive mass in every component")
    cdf = np.cumsum(mass / total)
    comp = np.minimum(np.searchsorted(cdf, rng.random(R), side="right"), H - 1)

    codes = np.zeros((R, len(covariates)), dtype=np.int64)
    for l, (theta, mask) in enumerate(zip(record.theta_x, cov_masks)):
        probs = theta[comp] * mask[None, :]
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(R)
        codes[:, l] = np.minimum(
            (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), mask.size - 1
        )

    X = encode_code_rows(covariates, codes) if len(covariates) else np.ones((R, 1))
    B = record.U[:, :, :L]
    Omega = record.U[:, :, L : L + Q_mu]
    Lam = record.U[:, :, L + Q_mu :]

    eta_star = rng.standard_normal(R)
    eta_tilde = rng.standard_normal((R, d["Q_eta"]))

    Bx = np.einsum("rpl,rl->rp", B[comp], X)
    Vx = np.einsum("rql,rl->rq", record.V[comp], X)
    om_mu = np.einsum("rpq,tq->rtp", Omega[comp], record.mu)
    eta = Vx[:, None, :] * eta_star[:, None, None] + np.einsum(
        "tqe,re->rtq", record.xi, eta_tilde
    )
    mean = Bx[:, None, :] + om_mu + np.einsum("rpq,rtq->rtp", Lam[comp], eta)
    sd = np.sqrt(record.sigma2[comp])[:, None, :]
    ystar = mean + sd * rng.standard_normal((R, T, layout.p))
    responses = links.to_observed(ystar, layout)
    return PredictiveDraw(component=comp, cov_codes=codes, responses=responses)


# --- concordance counting -------------------------------------------------------

def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    if a.size < 2:
        raise ValueError("need at least two observations")
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValueError("inputs must not contain NaN")
    return a, b


def concordance_counts_exact(a, b):
    """(N_c, N_d) by full pair enumeration; the quadratic oracle."""
    a, b = _check_pair(a, b)
    i, j = np.triu_indices(a.size, k=1)
    da = np.sign(a[j] - a[i])
    db = np.sign(b[j] - b[i])
    prod = da * db
    return int(np.sum(prod > 0)), int(np.sum(prod < 0))


def _tie_pairs(group_sizes: np.ndarray) -> int:
    return int(np.sum(group_sizes * (group_sizes - 1) // 2))


def _run_lengths(change_flags: np.ndarray, n: int) -> np.ndarray:
    # change_flags[i] is True when element i+1 starts a new run
    starts = np.concatenate([[0], np.flatnonzero(change_flags) + 1, [n]])
    return np.diff(starts)


def _count_inversions(values: np.ndarray) -> int:
    """Pairs (i < j) with values[i] > values[j]; vectorised merge passes."""
    n = values.size
    if n < 2:
        return 0
    size = 1 << int(n - 1).bit_length()
    arr = np.full(size, np.inf)
    arr[:n] = values
    inv = 0
    width = 1
    while width < size:
        rows = arr.reshape(-1, 2 * width)
        order = np.argsort(rows, axis=1, kind="stable")
        is_left = order < width
        cum_left = np.cumsum(is_left, axis=1)
        inv += int(np.sum((width - cum_left)[~is_left]))
        arr = np.take_along_axis(rows, order, axis=1).reshape(-1)
        width *= 2
    return inv


def concordance_counts_fast(a, b):
    """(N_c, N_d) via sorting; bit-identical to the exact enumeration."""
    a, b = _check_pair(a, b)
    n = a.size
    order = np.lexsort((b, a))
    a_s, b_s = a[order], b[order]
    n0 = n * (n - 1) // 2
    a_change = np.diff(a_s) != 0
    t_a = _tie_pairs(_run_lengths(a_change, n))
    b_sorted = np.sort(b)
    t_b = _tie_pairs(_run_lengths(np.diff(b_sorted) != 0, n))
    ab_change = a_change | (np.diff(b_s) != 0)
    t_ab = _tie_pairs(_run_lengths(ab_change, n))
    tied_free = n0 - t_a - t_b + t_ab          # N_c + N_d
    n_d = _count_inversions(b_s)
    n_c = tied_free - n_d
    return int(n_c), int(n_d)


def _gamma_from_counts(n_c: int, n_d: int) -> float:
    if n_c + n_d == 0:
        return float("nan")
    return (n_c - n_d) / (n_c + n_d)


def gk_gamma_exact(a, b) -> float:
    """Goodman-Kruskal gamma by exhaustive pair counting; NaN when undefined."""
    return _gamma_from_counts(*concordance_counts_exact(a, b))


def gk_gamma_fast(a, b) -> float:
    """Goodman-Kruskal gamma in O(n log^2 n); identical to `gk_gamma_exact`."""
    return _gamma_from_counts(*concordance_counts_fast(a, b))


# --- trajectory assembly -----------------------------------------------------------

@dataclass
class GammaTrajectory:
    """Per-draw gamma values for one variable pair at one time point."""

    pair: str
    time: float
    subpop: str
    values: np.ndarray       # (n_draws,) with NaN for undefined draws

    @property
    def n_defined(self) -> int:
        return int(np.sum(~np.isnan(self.values)))

    @property
    def mean(self) -> float:
        return float(np.nanmean(self.values)) if self.n_defined else float("nan")

    def quantile(self, q: float) -> float:
        if not self.n_defined:
            return float("nan")
        return float(np.nanpercentile(self.values, q))


def expand_columns(variables):
    """Ordered association columns: (label, variable index, category index|None).

    Ordered kinds contribute themselves; a nominal variable contributes one
    0/1 indicator per category, labelled name=category.
    """
    columns = []
    for j, v in enumerate(variables):
        if v.kind == "nominal":
            for c, lab in enumerate(v.categories):
                columns.append((f"{v.name}={lab}", j, c))
        else:
            columns.append((v.name, j, None))
    return columns


def column_matrix(responses: np.ndarray, columns) -> np.ndarray:
    """(R, T, n_cols) values for the expanded columns."""
    parts = []
    for _, j, cat in columns:
        vals = responses[:, :, j]
        parts.append(vals if cat is None else (vals == cat).astype(float))
    return np.stack(parts, axis=-1)


def association_pairs(columns):
    """All column index pairs whose underlying variables differ."""
    out = []
    for i1 in range(len(columns)):
        for i2 in range(i1 + 1, len(columns)):
            if columns[i1][1] != columns[i2][1]:
                out.append((i1, i2))
    return out


def gamma_trajectories(records, meta, query: SubpopulationQuery, R: int, seed: int,
                       weight_mode: str = "adjusted"):
    """Per-(pair, time) gamma samples across the saved sweeps.

    Each record gets an independent stream keyed by (seed, record index).
    Returns a list of GammaTrajectory in deterministic (pair, time) order.
    """
    if not records:
        raise ValueError("need at least one saved draw")
    columns = expand_columns(meta.variables)
    pairs = association_pairs(columns)
    label = query.label(meta.covariates)
    T = meta.time_grid.size
    values = np.full((len(pairs), T, len(records)), np.nan)
    for di, rec in enumerate(records):
        rng = np.random.default_rng([int(seed), di])
        sim = predictive_subjects(rec, meta, query, R, rng, weight_mode)
        mat = column_matrix(sim.responses, columns)
        for pi, (c1, c2) in enumerate(pairs):
            for t in range(T):
                n_c, n_d = concordance_counts_fast(mat[:, t, c1], mat[:, t, c2])
                values[pi, t, di] = _gamma_from_counts(n_c, n_d)
    out = []
    for pi, (c1, c2) in enumerate(pairs):
        name = f"{columns[c1][0]}~{columns[c2][0]}"
        for t in range(T):
            out.append(
                GammaTrajectory(
                    pair=name, time=float(meta.time_grid[t]), subpop=label,
                    values=values[pi, t].copy(),
                )
            )
    return out


# --- trajectory CSV contract ----------------------------------------------------------

TRAJECTORY_FIELDS = ("pair", "time", "subpop", "mean", "lo95", "hi95", "n_defined")


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def write_trajectory_csv(trajectories, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_FIELDS)
        for tr in trajectories:
            writer.writerow([
                tr.pair, repr(float(tr.time)), tr.subpop, _fmt(tr.mean),
                _fmt(tr.quantile(2.5)), _fmt(tr.quantile(97.5)), tr.n_defined,
            ])


def read_trajectory_csv(path):
    """Rows as dicts with numeric fields parsed; empty cells become NaN."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(TRAJECTORY_FIELDS):
            raise ValueError(f"{path}: unexpected trajectory header {reader.fieldnames}")
        for row in reader:
            out.append({
                "pair": row["pair"],
                "time": float(row["time"]),
                "subpop": row["subpop"],
                "mean": float(row["mean"]) if row["mean"] else float("nan"),
                "lo95": float(row["lo95"]) if row["lo95"] else float("nan"),
                "hi95": float(row["hi95"]) if row["hi95"] else float("nan"),
                "n_defined": int(row["n_defined"]),
            })
    return out
