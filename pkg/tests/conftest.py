import numpy as np
import pytest

from panelmix.dataset import PanelDataset
from panelmix.model import ModelConfig, Problem, init_state
from panelmix.schema import CovariateSchema, VariableSchema

TINY_VARIABLES = (
    VariableSchema(name="yc", kind="continuous"),
    VariableSchema(name="yb", kind="binary"),
    VariableSchema(name="yk", kind="count", cutpoint_style="integer"),
    VariableSchema(name="yn", kind="nominal", categories=("a", "b", "c")),
)
TINY_COVARIATES = (
    CovariateSchema(name="x", kind="binary"),
    CovariateSchema(name="g", kind="nominal", categories=("u", "v", "w")),
)


def build_tiny_dataset(n=5, seed=0, with_missing=True, weights=None, population=None):
    """Small mixed-scale panel over the time grid {1, 2, 3}, 2 waves each."""
    rng = np.random.default_rng(seed)
    ids = [f"id{i}" for i in range(n)]
    if weights is None:
        weights = 1.0 + rng.random(n)
    cov_codes = np.stack([rng.integers(0, 2, n), rng.integers(0, 3, n)], axis=1)
    obs_subject = np.repeat(np.arange(n), 2)
    if n:
        pick = np.stack([rng.permutation([1.0, 2.0, 3.0])[:2] for _ in range(n)])
        obs_time = np.sort(pick, axis=1).reshape(-1)
    else:
        obs_time = np.zeros(0)
    n_obs = obs_subject.size
    responses = np.column_stack([
        rng.normal(size=n_obs),
        rng.integers(0, 2, n_obs).astype(float),
        rng.integers(0, 4, n_obs).astype(float),
        rng.integers(0, 3, n_obs).astype(float),
    ])
    if with_missing:
        responses[1, 1] = np.nan
        responses[2, 3] = np.nan
        cov_codes = cov_codes.copy()
        cov_codes[1, 1] = -1
    return PanelDataset(
        variables=TINY_VARIABLES,
        covariates=TINY_COVARIATES,
        population_size=population if population is not None else max(100, n),
        ids=ids,
        weights=np.asarray(weights, dtype=float),
        cov_codes=cov_codes.astype(np.int64),
        obs_subject=obs_subject,
        obs_time=obs_time,
        responses=responses,
    )


def build_tiny_state(seed=0, n=5, with_missing=True, **config_kwargs):
    """A randomised but valid chain state on the tiny dataset."""
    defaults = dict(
        H=3, Q=2, Q_mu=2, Q_eta=2, kappa_grid_size=4, burnin=0, iterations=10,
        thin=1, debug_checks=True,
    )
    defaults.update(config_kwargs)
    config = ModelConfig(**defaults)
    dataset = build_tiny_dataset(n=n, seed=seed, with_missing=with_missing)
    problem = Problem(config, dataset)
    rng = np.random.default_rng(seed + 1000)
    state = init_state(config, dataset, rng, problem)
    return state, rng


@pytest.fixture
def tiny_dataset():
    return build_tiny_dataset()


@pytest.fixture
def tiny_state():
    state, rng = build_tiny_state()
    return state
