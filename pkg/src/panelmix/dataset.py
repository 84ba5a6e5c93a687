"""Panel dataset container and CSV ingestion.

File contract:
  * subject file: CSV ``id,weight,<cov1>,<cov2>,...`` with empty cell = missing;
  * observation file: CSV long format ``id,time,<var1>,<var2>,...`` with empty
    cell = missing;
  * schema file: YAML listing responses, covariates and the population size
    (see `schema.read_schema_file`).

Internally observations are kept in flat arrays sorted by (subject, time) so
the sampler can vectorise across observation rows.  Missing response cells are
NaN in `responses`; missing covariates are -1 in `cov_codes`.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

from .schema import (
    CovariateLayout,
    LatentLayout,
    SchemaError,
    read_schema_file,
    validate_schema,
    write_schema_file,
)


class DataError(ValueError):
    pass


@dataclass
class SubjectRecord:
    """Row-oriented view of one subject, used for I/O and friendly access."""

    id: str
    weight: float
    covariates: list      # per-covariate category index, None if missing
    times: list           # strictly increasing observation times
    responses: list       # list (per time) of per-variable value-or-None


@dataclass
class PanelDataset:
    """Mixed-scale longitudinal survey sample with design weights."""

    variables: tuple                 # response VariableSchema, schema order
    covariates: tuple                # CovariateSchema
    population_size: int             # N
    ids: list                        # subject ids, length n
    weights: np.ndarray              # (n,) positive
    cov_codes: np.ndarray            # (n, n_cov) int, -1 = missing
    obs_subject: np.ndarray          # (n_obs,) subject index, sorted
    obs_time: np.ndarray             # (n_obs,) float times
    responses: np.ndarray            # (n_obs, n_vars) float, NaN = missing
    time_grid: np.ndarray = field(init=False)   # sorted distinct times
    obs_time_idx: np.ndarray = field(init=False)  # index into time_grid

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.cov_codes = np.asarray(self.cov_codes, dtype=np.int64)
        self.obs_subject = np.asarray(self.obs_subject, dtype=np.int64)
        self.obs_time = np.asarray(self.obs_time, dtype=float)
        self.responses = np.asarray(self.responses, dtype=float)
        self._validate()
        self.time_grid = np.unique(self.obs_time)
        self.obs_time_idx = np.searchsorted(self.time_grid, self.obs_time)

    # -- invariants ---------------------------------------------------------

    def _validate(self):
        validate_schema(self.variables, self.covariates)
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise DataError("duplicate subject ids")
        if self.weights.shape != (n,):
            raise DataError("weights shape mismatch")
        bad = np.where(~(self.weights > 0))[0]
        if bad.size:
            raise DataError(f"non-positive weight for subject id {self.ids[bad[0]]!r}")
        if self.population_size < n:
            raise DataError(
                f"population size {self.population_size} smaller than sample size {n}"
            )
        if self.cov_codes.shape != (n, len(self.covariates)):
            raise DataError("covariate code shape mismatch")
        for l, c in enumerate(self.covariates):
            col = self.cov_codes[:, l]
            if ((col < -1) | (col >= c.n_categories)).any():
                raise DataError(f"covariate {c.name!r} has out-of-range codes")
        if self.obs_subject.shape != self.obs_time.shape:
            raise DataError("observation arrays misaligned")
        if self.responses.shape != (self.obs_subject.size, len(self.variables)):
            raise DataError("response array shape mismatch")
        if self.obs_subject.size:
            if self.obs_subject.min() < 0 or self.obs_subject.max() >= n:
                raise DataError("observation subject index out of range")
            order = np.lexsort((self.obs_time, self.obs_subject))
            if not np.array_equal(order, np.arange(order.size)):
                raise DataError("observations must be sorted by (subject, time)")
            same = self.obs_subject[1:] == self.obs_subject[:-1]
            if np.any(same & ~(self.obs_time[1:] > self.obs_time[:-1])):
                i = int(self.obs_subject[1:][same & ~(self.obs_time[1:] > self.obs_time[:-1])][0])
                raise DataError(f"non-increasing times within subject id {self.ids[i]!r}")
        for j, v in enumerate(self.variables):
            col = self.responses[:, j]
            seen = col[~np.isnan(col)]
            if v.kind == "binary" and not np.isin(seen, (0.0, 1.0)).all():
                raise DataError(f"binary variable {v.name!r} has values outside {{0,1}}")
            if v.kind == "count":
                if (seen < 0).any() or not np.array_equal(seen, np.floor(seen)):
                    raise DataError(f"count variable {v.name!r} has non-integer or negative values")
            if v.kind == "nominal":
                if ((seen < 0) | (seen >= v.n_categories)).any() or not np.array_equal(
                    seen, np.floor(seen)
                ):
                    raise DataError(f"nominal variable {v.name!r} has invalid category codes")

    # -- derived ------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_obs(self) -> int:
        return int(self.obs_subject.size)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def latent_layout(self) -> LatentLayout:
        return LatentLayout.from_schema(self.variables)

    def covariate_layout(self) -> CovariateLayout:
        return CovariateLayout.from_schema(self.covariates)

    def missing_mask(self) -> np.ndarray:
        """(n_obs, n_vars) bool, True where the cell is missing."""
        return np.isnan(self.responses)

    def subject_obs_slices(self):
        """Start offsets of each subject's contiguous observation block."""
        starts = np.searchsorted(self.obs_subject, np.arange(self.n))
        stops = np.searchsorted(self.obs_subject, np.arange(self.n), side="right")
        return starts, stops

    def subjects(self):
        """Yield SubjectRecord views (for I/O and tests)."""
        starts, stops = self.subject_obs_slices()
        for i, sid in enumerate(self.ids):
            covs = [int(c) if c >= 0 else None for c in self.cov_codes[i]]
            times, rows = [], []
            for o in range(starts[i], stops[i]):
                times.append(float(self.obs_time[o]))
                row = []
                for j in range(self.n_vars):
                    val = self.responses[o, j]
                    row.append(None if np.isnan(val) else float(val))
                rows.append(row)
            yield SubjectRecord(
                id=sid, weight=float(self.weights[i]), covariates=covs,
                times=times, responses=rows,
            )

    def missingness_report(self) -> dict:
        """Per-variable counts of design-missing vs item-missing cells.

        A (variable, time) cell is design-missing when it is absent for every
        subject observed at that time; remaining missing cells are item-level.
        """
        mask = self.missing_mask()
        report = {}
        for j, v in enumerate(self.variables):
            design = item = 0
            for t_idx in range(self.time_grid.size):
                at_t = self.obs_time_idx == t_idx
                n_at_t = int(at_t.sum())
                n_miss = int(mask[at_t, j].sum())
                if n_at_t and n_miss == n_at_t:
                    design += n_miss
                else:
                    item += n_miss
            report[v.name] = {"design_missing": design, "item_missing": item}
        return report


# --- covariate design encoding ---------------------------------------------

def encode_code_rows(covariates, codes: np.ndarray) -> np.ndarray:
    """Design rows for complete covariate code rows (no -1 entries)."""
    codes = np.asarray(codes, dtype=np.int64)
    if (codes < 0).any():
        raise DataError("cannot encode missing covariates; supply imputed codes")
    layout = CovariateLayout.from_schema(covariates)
    X = np.zeros((codes.shape[0], layout.L))
    X[:, 0] = 1.0
    for l, c in enumerate(covariates):
        start, stop = layout.span(l)
        if c.kind == "binary":
            X[:, start] = codes[:, l].astype(float)
        else:
            X[np.arange(codes.shape[0]), start + codes[:, l]] = 1.0
    return X


def encode_covariates(dataset: PanelDataset, codes: np.ndarray = None) -> np.ndarray:
    """Design matrix X of shape (n, L): intercept, then covariate blocks.

    Binary covariates contribute one 0/1 column; nominal covariates a full
    one-hot block (no dropped reference level -- shrinkage on the loadings
    absorbs the redundancy).  `codes` overrides the dataset's covariate codes
    (used with imputed values); it must be complete (no -1 entries).
    """
    if codes is None:
        codes = dataset.cov_codes
    return encode_code_rows(dataset.covariates, codes)


def decode_covariates(X: np.ndarray, covariates) -> np.ndarray:
    """Inverse of `encode_covariates` (round-trip check helper)."""
    layout = CovariateLayout.from_schema(covariates)
    codes = np.zeros((X.shape[0], len(covariates)), dtype=np.int64)
    for l, c in enumerate(covariates):
        start, stop = layout.span(l)
        if c.kind == "binary":
            codes[:, l] = np.rint(X[:, start]).astype(np.int64)
        else:
            codes[:, l] = np.argmax(X[:, start:stop], axis=1)
    return codes


# --- CSV I/O -----------------------------------------------------------------

def _parse_response(cell: str, v, path, line_no):
    cell = cell.strip()
    if cell == "":
        return np.nan
    try:
        if v.kind == "continuous":
            return float(cell)
        if v.kind == "binary":
            val = int(cell)
            if val not in (0, 1):
                raise ValueError
            return float(val)
        if v.kind == "count":
            val = int(cell)
            if val < 0:
                raise ValueError
            return float(val)
        # nominal: cell is a category label
        if cell not in v.categories:
            raise DataError(
                f"{path}:{line_no}: unknown category {cell!r} for {v.name!r} "
                f"(valid: {list(v.categories)})"
            )
        return float(v.categories.index(cell))
    except DataError:
        raise
    except ValueError:
        raise DataError(f"{path}:{line_no}: bad {v.kind} value {cell!r} for {v.name!r}") from None


def load_dataset(subject_file, observation_file, schema_file) -> PanelDataset:
    """Load and validate a panel dataset from its three files."""
    variables, covariates, population_size = read_schema_file(schema_file)

    ids, weights, cov_rows = [], [], []
    with open(subject_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["id", "weight"] + [c.name for c in covariates]
        if header != expected:
            raise DataError(f"{subject_file}:1: header {header} != expected {expected}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DataError(f"{subject_file}:{line_no}: expected {len(expected)} fields")
            sid = row[0].strip()
            try:
                w = float(row[1])
            except ValueError:
                raise DataError(f"{subject_file}:{line_no}: bad weight {row[1]!r}") from None
            if not w > 0:
                raise DataError(f"{subject_file}:{line_no}: weight <= 0 for subject id {sid!r}")
            codes = []
            for c, cell in zip(covariates, row[2:]):
                cell = cell.strip()
                if cell == "":
                    codes.append(-1)
                elif cell in c.categories:
                    codes.append(c.categories.index(cell))
                else:
                    raise DataError(
                        f"{subject_file}:{line_no}: unknown category {cell!r} for "
                        f"covariate {c.name!r} (valid: {list(c.categories)})"
                    )
            ids.append(sid)
            weights.append(w)
            cov_rows.append(codes)

    index = {sid: i for i, sid in enumerate(ids)}
    obs_subject, obs_time, resp_rows = [], [], []
    with open(observation_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["id", "time"] + [v.name for v in variables]
        if header != expected:
            raise DataError(f"{observation_file}:1: header {header} != expected {expected}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DataError(f"{observation_file}:{line_no}: expected {len(expected)} fields")
            sid = row[0].strip()
            if sid not in index:
                raise DataError(f"{observation_file}:{line_no}: unknown subject id {sid!r}")
            try:
                t = float(row[1])
            except ValueError:
                raise DataError(f"{observation_file}:{line_no}: bad time {row[1]!r}") from None
            obs_subject.append(index[sid])
            obs_time.append(t)
            resp_rows.append(
                [_parse_response(cell, v, observation_file, line_no)
                 for v, cell in zip(variables, row[2:])]
            )

    obs_subject = np.asarray(obs_subject, dtype=np.int64)
    obs_time = np.asarray(obs_time, dtype=float)
    responses = (
        np.asarray(resp_rows, dtype=float)
        if resp_rows else np.zeros((0, len(variables)))
    )
    order = np.lexsort((obs_time, obs_subject))
    dataset = PanelDataset(
        variables=tuple(variables),
        covariates=tuple(covariates),
        population_size=population_size,
        ids=ids,
        weights=np.asarray(weights),
        cov_codes=np.asarray(cov_rows, dtype=np.int64).reshape(len(ids), len(covariates)),
        obs_subject=obs_subject[order],
        obs_time=obs_time[order],
        responses=responses[order],
    )
    for name, counts in dataset.missingness_report().items():
        if counts["design_missing"] or counts["item_missing"]:
            logger.info(
                "variable %s: %d design-missing, %d item-missing cells",
                name, counts["design_missing"], counts["item_missing"],
            )
    return dataset


def _format_response(val, v) -> str:
    if val is None or (isinstance(val, float) and np.isnan(val)):
        return ""
    if v.kind == "continuous":
        return repr(float(val))
    if v.kind == "nominal":
        return v.categories[int(val)]
    return str(int(val))


def save_dataset(dataset: PanelDataset, subject_file, observation_file, schema_file) -> None:
    """Write the three dataset files; `load_dataset` round-trips bit-exactly."""
    write_schema_file(schema_file, dataset.variables, dataset.covariates,
                      dataset.population_size)
    with open(subject_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "weight"] + [c.name for c in dataset.covariates])
        for i, sid in enumerate(dataset.ids):
            row = [sid, repr(float(dataset.weights[i]))]
            for l, c in enumerate(dataset.covariates):
                code = dataset.cov_codes[i, l]
                row.append("" if code < 0 else c.categories[code])
            writer.writerow(row)
    with open(observation_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time"] + [v.name for v in dataset.variables])
        for o in range(dataset.n_obs):
            row = [dataset.ids[dataset.obs_subject[o]], repr(float(dataset.obs_time[o]))]
            for j, v in enumerate(dataset.variables):
                row.append(_format_response(dataset.responses[o, j], v))
            writer.writerow(row)
