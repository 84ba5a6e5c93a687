"""Variable schemas, covariate encoding layout, and the latent-coordinate map.

A dataset carries two kinds of variables: mixed-scale responses (continuous,
binary, count, nominal) observed repeatedly over time, and static categorical
covariates.  Responses are backed by latent continuous coordinates; a nominal
variable with d categories occupies d-1 coordinates (the last category's
utility is pinned at zero), every other kind occupies one.
"""

from dataclasses import dataclass, field

import yaml

RESPONSE_KINDS = ("continuous", "binary", "count", "nominal")
COVARIATE_KINDS = ("binary", "nominal")
CUTPOINT_STYLES = ("integer", "log")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class VariableSchema:
    """Schema for one response variable."""

    name: str
    kind: str
    categories: tuple = ()
    cutpoint_style: str = ""

    def __post_init__(self):
        if self.kind not in RESPONSE_KINDS:
            raise SchemaError(f"unknown response kind {self.kind!r} for {self.name!r}")
        if self.kind == "nominal":
            if len(self.categories) < 2:
                raise SchemaError(f"nominal variable {self.name!r} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"duplicate categories in {self.name!r}")
        elif self.categories:
            raise SchemaError(f"{self.name!r}: categories only allowed for nominal variables")
        if self.kind == "count":
            if self.cutpoint_style not in CUTPOINT_STYLES:
                raise SchemaError(
                    f"count variable {self.name!r} needs cutpoint_style in {CUTPOINT_STYLES}"
                )
        elif self.cutpoint_style:
            raise SchemaError(f"{self.name!r}: cutpoint_style only allowed for count variables")

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def latent_dim(self) -> int:
        return len(self.categories) - 1 if self.kind == "nominal" else 1


@dataclass(frozen=True)
class CovariateSchema:
    """Schema for one static categorical covariate.

    Values are stored internally as 0-based category indices; `categories`
    holds the external labels in index order.  A binary covariate has the
    fixed labels ("0", "1") and encodes as a single 0/1 design column, while
    a nominal covariate with d categories expands to d indicator columns.
    """

    name: str
    kind: str
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise SchemaError(f"unknown covariate kind {self.kind!r} for {self.name!r}")
        if self.kind == "binary":
            if self.categories and tuple(self.categories) != ("0", "1"):
                raise SchemaError(f"binary covariate {self.name!r} has fixed categories 0/1")
            object.__setattr__(self, "categories", ("0", "1"))
        else:
            if len(self.categories) < 2:
                raise SchemaError(f"nominal covariate {self.name!r} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"duplicate categories in covariate {self.name!r}")

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def design_dim(self) -> int:
        # full one-hot for nominal, single column for binary
        return 1 if self.kind == "binary" else len(self.categories)


def validate_schema(responses, covariates):
    names = [v.name for v in responses] + [c.name for c in covariates]
    if len(set(names)) != len(names):
        raise SchemaError("variable names must be unique across responses and covariates")
    if not responses:
        raise SchemaError("at least one response variable is required")


@dataclass(frozen=True)
class LatentLayout:
    """Mapping from response variables to latent-coordinate ranges.

    Ranges follow schema order and partition [0, p).
    """

    variables: tuple
    starts: tuple
    stops: tuple

    @classmethod
    def from_schema(cls, variables) -> "LatentLayout":
        variables = tuple(variables)
        starts, stops = [], []
        pos = 0
        for v in variables:
            starts.append(pos)
            pos += v.latent_dim
            stops.append(pos)
        return cls(variables=variables, starts=tuple(starts), stops=tuple(stops))

    @property
    def p(self) -> int:
        return self.stops[-1] if self.variables else 0

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def span(self, j: int) -> tuple:
        """Latent index range (start, stop) of variable j."""
        return self.starts[j], self.stops[j]

    def coords(self, j: int) -> range:
        return range(self.starts[j], self.stops[j])


def latent_layout(variables) -> LatentLayout:
    """Build the latent-coordinate layout for a response schema."""
    return LatentLayout.from_schema(variables)


@dataclass(frozen=True)
class CovariateLayout:
    """Design-vector layout: intercept column 0, then per-covariate blocks."""

    covariates: tuple
    starts: tuple
    stops: tuple

    @classmethod
    def from_schema(cls, covariates) -> "CovariateLayout":
        covariates = tuple(covariates)
        starts, stops = [], []
        pos = 1  # intercept
        for c in covariates:
            starts.append(pos)
            pos += c.design_dim
            stops.append(pos)
        return cls(covariates=covariates, starts=tuple(starts), stops=tuple(stops))

    @property
    def L(self) -> int:
        return self.stops[-1] if self.covariates else 1

    def span(self, l: int) -> tuple:
        return self.starts[l], self.stops[l]


@dataclass(frozen=True)
class SubpopulationQuery:
    """Restriction of the covariate space: covariate name -> allowed indices.

    An empty mapping means the whole population.  `label` is the canonical
    display form, e.g. "x=1" or "all".
    """

    allowed: dict = field(default_factory=dict)

    def label(self, covariates) -> str:
        if not self.allowed:
            return "all"
        by_name = {c.name: c for c in covariates}
        parts = []
        for name in sorted(self.allowed):
            cats = sorted(self.allowed[name])
            labels = ",".join(by_name[name].categories[i] for i in cats)
            parts.append(f"{name}={labels}")
        return ";".join(parts)

    @classmethod
    def parse(cls, expr: str, covariates) -> "SubpopulationQuery":
        """Parse an expression like "gender=1;race=2,3" against the schema."""
        expr = (expr or "").strip()
        if not expr or expr == "all":
            return cls({})
        by_name = {c.name: c for c in covariates}
        allowed = {}
        for clause in expr.split(";"):
            clause = clause.strip()
            if not clause:
                continue
            if "=" not in clause:
                raise SchemaError(f"bad subpopulation clause {clause!r} (expected name=cat[,cat])")
            name, _, cats = clause.partition("=")
            name = name.strip()
            if name not in by_name:
                raise SchemaError(
                    f"unknown covariate {name!r}; known: {sorted(by_name)}"
                )
            schema = by_name[name]
            idx = set()
            for cat in cats.split(","):
                cat = cat.strip()
                if cat not in schema.categories:
                    raise SchemaError(
                        f"unknown category {cat!r} for covariate {name!r}; "
                        f"valid: {list(schema.categories)}"
                    )
                idx.add(schema.categories.index(cat))
            if not idx:
                raise SchemaError(f"empty category set for covariate {name!r}")
            allowed[name] = idx
        return cls(allowed)


# --- schema file I/O -------------------------------------------------------

def _variable_to_dict(v: VariableSchema) -> dict:
    d = {"name": v.name, "kind": v.kind}
    if v.kind == "nominal":
        d["categories"] = list(v.categories)
    if v.kind == "count":
        d["cutpoint_style"] = v.cutpoint_style
    return d


def _covariate_to_dict(c: CovariateSchema) -> dict:
    d = {"name": c.name, "kind": c.kind}
    if c.kind == "nominal":
        d["categories"] = list(c.categories)
    return d


def write_schema_file(path, responses, covariates, population_size: int) -> None:
    doc = {
        "population_size": int(population_size),
        "responses": [_variable_to_dict(v) for v in responses],
        "covariates": [_covariate_to_dict(c) for c in covariates],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def read_schema_file(path):
    """Read a schema file; returns (responses, covariates, population_size)."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: schema file must be a mapping")
    try:
        population_size = int(doc["population_size"])
    except KeyError:
        raise SchemaError(f"{path}: missing population_size") from None
    responses = []
    for entry in doc.get("responses", []):
        responses.append(
            VariableSchema(
                name=str(entry["name"]),
                kind=str(entry["kind"]),
                categories=tuple(str(c) for c in entry.get("categories", [])),
                cutpoint_style=str(entry.get("cutpoint_style", "")),
            )
        )
    covariates = []
    for entry in doc.get("covariates", []):
        covariates.append(
            CovariateSchema(
                name=str(entry["name"]),
                kind=str(entry["kind"]),
                categories=tuple(str(c) for c in entry.get("categories", [])),
            )
        )
    validate_schema(responses, covariates)
    return responses, covariates, population_size
