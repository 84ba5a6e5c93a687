"""Model configuration, priors, kernels, state container and initialisation.

The generative model for subject i in mixture component h:

    y*_ij = B_h x_i + Omega_h mu_{t_ij} + Lambda_h eta_ij + eps_ij,
    eps_ij ~ N(0, diag(sigma2_h));
    eta_ij = V_h x_i eta*_i + xi_{t_ij} etatilde_i,
    eta*_i ~ N(0, 1),  etatilde_i ~ N(0, I);
    mu and xi columns follow zero-mean Gaussian processes with squared
    exponential covariance exp(-kappa |t - t'|^2), kappa on a finite grid;
    component weights come from a truncated stick-breaking construction,
    v_h ~ Beta(1, alpha); covariates are per-component multinomials.

Loading matrices carry a normal/inverse-gamma scale-mixture shrinkage prior
(marginally Cauchy): U_hkl ~ N(0, delta2_kl), delta2_kl ~ IG(1/2, 1/2), with
scales shared across components.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml
from scipy.linalg import cho_solve

from . import links
from .dataset import PanelDataset, encode_covariates
from .schema import LatentLayout


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    """A full conditional could not be evaluated / factorised."""


@dataclass
class ModelConfig:
    """Sampler and prior settings; defaults follow the reference study setup."""

    H: int = 60                      # mixture truncation level
    Q: int = 4                       # dynamic factor dimension
    Q_mu: int = 4                    # time-effect dimension
    Q_eta: int = 4                   # subject random-effect dimension
    kappa_grid_size: int = 25        # grid points on (0, 1] for both kappas
    alpha_prior_a: float = 0.25      # Gamma(shape, rate) prior on alpha
    alpha_prior_b: float = 0.25
    sigma2_prior_a: float = 2.0      # IG shape of the noise-variance prior
    sigma2_prior_scale: object = "auto"   # "auto" => s_k / 200 per coordinate
    prior_mass_fraction: float = 0.01     # Dirichlet prior mass = fraction * N
    burnin: int = 5000
    iterations: int = 10000          # post-burn-in sweeps
    thin: int = 10
    seed: object = None
    jitter: float = 1e-6             # added to GP Gram diagonals
    allocation_eta: str = "recompute"    # or "freeze": eta held at current s_i
    debug_checks: bool = False

    def __post_init__(self):
        if self.H < 2:
            raise ConfigError("H must be >= 2")
        if self.kappa_grid_size < 1:
            raise ConfigError("kappa_grid_size must be >= 1")
        if min(self.Q, self.Q_mu, self.Q_eta) < 1:
            raise ConfigError("factor dimensions must be >= 1")
        if self.allocation_eta not in ("recompute", "freeze"):
            raise ConfigError("allocation_eta must be 'recompute' or 'freeze'")
        if not (0 < self.prior_mass_fraction <= 1):
            raise ConfigError("prior_mass_fraction must lie in (0, 1]")
        for name in ("burnin", "iterations", "thin"):
            if getattr(self, name) < (0 if name == "burnin" else 1):
                raise ConfigError(f"{name} out of range")

    @property
    def kappa_grid(self) -> np.ndarray:
        G = self.kappa_grid_size
        return np.arange(1, G + 1, dtype=float) / G

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["sigma2_prior_scale"], np.ndarray):
            d["sigma2_prior_scale"] = [float(x) for x in d["sigma2_prior_scale"]]
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "ModelConfig":
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(doc)

    def to_yaml(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


# --- kernels and weights -----------------------------------------------------

def gp_kernel_matrix(times, kappa: float, jitter: float = 0.0) -> np.ndarray:
    """Squared-exponential Gram matrix exp(-kappa (t - t')^2) + jitter I."""
    t = np.asarray(times, dtype=float)
    if np.unique(t).size != t.size:
        raise ValueError("times must be distinct")
    diff = t[:, None] - t[None, :]
    K = np.exp(-kappa * diff * diff)
    if jitter:
        K = K + jitter * np.eye(t.size)
    if not np.all(np.isfinite(K)):
        raise NumericalError("non-finite GP kernel entries")
    return K


def stick_to_weights(v) -> np.ndarray:
    """Stick-breaking weights: pi_h = v_h prod_{b<h}(1 - v_b), pi_H the remainder."""
    v = np.asarray(v, dtype=float)
    if np.any((v <= 0) | (v >= 1)):
        raise ValueError("sticks must lie in (0, 1)")
    remain = np.concatenate([[1.0], np.cumprod(1.0 - v)])
    pi = np.empty(v.size + 1)
    pi[:-1] = v * remain[:-1]
    pi[-1] = remain[-1]
    return pi


def stick_weights_from_logs(v, log1mv) -> np.ndarray:
    """Stick weights from sticks plus exact log(1 - v) (tail-stable form).

    Equals `stick_to_weights` wherever 1 - v is representable, but keeps the
    telescoping product correct when sticks round to 1.0 in floating point.
    """
    v = np.asarray(v, dtype=float)
    log1mv = np.asarray(log1mv, dtype=float)
    log_remain = np.concatenate([[0.0], np.cumsum(log1mv)])
    pi = np.empty(v.size + 1)
    pi[:-1] = v * np.exp(log_remain[:-1])
    pi[-1] = np.exp(log_remain[-1])
    return pi


def beta_with_log1m(rng, a, b):
    """Beta(a, b) draws returning (v, log(1 - v)) with an exact log tail.

    Uses the gamma-ratio construction 1 - v = G_b / (G_a + G_b) with the
    shape-boost identity G_b = W U^{1/b}, W ~ Gamma(b + 1), so log(1 - v)
    stays finite and exact even when b is tiny and 1 - v underflows.  The
    stick conditionals v_h ~ Beta(1 + n_h, alpha + n_{>h}) hit that regime
    whenever alpha is small and no data lie beyond h.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast_shapes(a.shape, b.shape)
    W = rng.gamma(np.broadcast_to(b, shape) + 1.0)
    logU = np.log1p(-rng.random(shape))          # log of Uniform(0, 1], never -inf
    lgb = np.log(W) + logU / np.broadcast_to(b, shape)
    log_ga = np.log(rng.gamma(np.broadcast_to(a, shape)))
    log_u = lgb - np.logaddexp(lgb, log_ga)
    v = -np.expm1(log_u)
    return v, log_u


def gaussian_diag_loglik(y, mean, sigma2) -> np.ndarray:
    """Log N(y | mean, diag(sigma2)) summed over the last axis."""
    resid = np.asarray(y, dtype=float) - mean
    return -0.5 * np.sum(
        resid * resid / sigma2 + np.log(2.0 * math.pi * sigma2), axis=-1
    )


# --- chain state -------------------------------------------------------------

@dataclass
class ChainState:
    """Full sampler state; arrays are documented in `Problem` dimension terms."""

    problem: "Problem"
    iteration: int
    alpha: float
    v: np.ndarray            # (H-1,)
    log1mv: np.ndarray       # (H-1,) exact log(1 - v), kept alongside v
    pi: np.ndarray           # (H,)
    U: np.ndarray            # (H, p, L*) = [B | Omega | Lambda]
    V: np.ndarray            # (H, Q, L)
    sigma2: np.ndarray       # (H, p)
    theta_x: list            # per covariate: (H, d_l) simplex rows
    mu: np.ndarray           # (T, Q_mu)
    xi: np.ndarray           # (T, Q, Q_eta)
    kappa_mu_idx: int
    kappa_xi_idx: int
    s: np.ndarray            # (n,) component indices in [0, H)
    eta_star: np.ndarray     # (n,)
    eta_tilde: np.ndarray    # (n, Q_eta)
    ystar: np.ndarray        # (n_obs, p)
    cov_codes: np.ndarray    # (n, n_cov) with imputations filled in
    X: np.ndarray            # (n, L) design rows for cov_codes
    delta2: np.ndarray       # (p, L*)
    zeta2: np.ndarray        # (Q, L)

    @property
    def B(self) -> np.ndarray:
        return self.U[:, :, : self.problem.L]

    @property
    def Omega(self) -> np.ndarray:
        return self.U[:, :, self.problem.L : self.problem.L + self.problem.Q_mu]

    @property
    def Lambda(self) -> np.ndarray:
        return self.U[:, :, self.problem.L + self.problem.Q_mu :]

    @property
    def kappa_mu(self) -> float:
        return float(self.problem.kappa_grid[self.kappa_mu_idx])

    @property
    def kappa_xi(self) -> float:
        return float(self.problem.kappa_grid[self.kappa_xi_idx])

    def imputed_responses(self) -> np.ndarray:
        """Observed table with missing cells filled by g(y*)."""
        out = self.problem.responses.copy()
        mask = self.problem.miss_mask
        if mask.any():
            codes = links.to_observed(self.ystar, self.problem.layout)
            out[mask] = codes[mask]
        return out


class Problem:
    """Dataset-derived constants shared by every sweep of one chain."""

    def __init__(self, config: ModelConfig, dataset: PanelDataset):
        self.config = config
        self.dataset = dataset
        self.layout: LatentLayout = dataset.latent_layout()
        self.cov_layout = dataset.covariate_layout()

        self.n = dataset.n
        self.n_obs = dataset.n_obs
        self.p = self.layout.p
        self.L = self.cov_layout.L
        self.Q = config.Q
        self.Q_mu = config.Q_mu
        self.Q_eta = config.Q_eta
        self.Lstar = self.L + self.Q_mu + self.Q
        self.H = config.H
        if self.p < 1:
            raise ConfigError("empty response schema")
        if self.Q >= self.p or self.Q_mu >= self.p:
            raise ConfigError(
                f"factor dimensions must satisfy Q, Q_mu < p (got Q={self.Q}, "
                f"Q_mu={self.Q_mu}, p={self.p})"
            )

        self.time_grid = dataset.time_grid
        self.T = int(self.time_grid.size)
        self.obs_subject = dataset.obs_subject
        self.obs_time_idx = dataset.obs_time_idx
        starts, stops = dataset.subject_obs_slices()
        self.subj_starts = starts
        self.subj_stops = stops
        self.n_i = (stops - starts).astype(float)

        self.weights = dataset.weights
        self.weight_c = float(dataset.weights.sum() / dataset.population_size) if self.n else 1.0
        total_mass = config.prior_mass_fraction * dataset.population_size
        self.prior_mass = np.full(self.H, total_mass / self.H)

        # per-coordinate variable bookkeeping
        self.coord_var = np.empty(self.p, dtype=np.int64)
        for j in range(self.layout.n_vars):
            a, b = self.layout.span(j)
            self.coord_var[a:b] = j

        self.sigma2_a_tilde, self.sigma2_b_tilde = self._resolve_sigma2_prior()

        # GP Gram factorisations on the kappa grid (shared by both kappas)
        self.kappa_grid = config.kappa_grid
        if self.T:
            self.gp_chol = np.stack(
                [np.linalg.cholesky(gp_kernel_matrix(self.time_grid, c, config.jitter))
                 for c in self.kappa_grid]
            )
            self.gp_logdet = 2.0 * np.sum(
                np.log(np.diagonal(self.gp_chol, axis1=1, axis2=2)), axis=1
            )
            eye = np.eye(self.T)
            self.gp_prec = np.stack(
                [cho_solve((L, True), eye) for L in self.gp_chol]
            )
        else:
            self.gp_chol = np.zeros((self.kappa_grid.size, 0, 0))
            self.gp_logdet = np.zeros(self.kappa_grid.size)
            self.gp_prec = np.zeros((self.kappa_grid.size, 0, 0))

        self.cov_missing = dataset.cov_codes < 0
        self.set_responses(dataset.responses)

    # -- response-dependent caches (rebuilt when data are replaced) ---------

    def set_responses(self, responses: np.ndarray) -> None:
        """Install the observed response table and rebuild link caches."""
        responses = np.asarray(responses, dtype=float)
        self.responses = responses
        self.miss_mask = np.isnan(responses)
        self.obs_rows = []       # per variable: observed row indices
        self.miss_rows = []      # per variable: missing row indices
        self.interval_lo = []    # per variable (ordered kinds): (m,) bounds
        self.interval_hi = []
        for j, v in enumerate(self.dataset.variables):
            observed = np.where(~self.miss_mask[:, j])[0]
            self.obs_rows.append(observed)
            self.miss_rows.append(np.where(self.miss_mask[:, j])[0])
            if v.kind == "binary":
                y = responses[observed, j]
                lo = np.where(y > 0, 0.0, -np.inf)
                hi = np.where(y > 0, np.inf, 0.0)
            elif v.kind == "count":
                lo, hi = links.count_bounds(responses[observed, j], v.cutpoint_style)
            else:
                lo = hi = None
            self.interval_lo.append(lo)
            self.interval_hi.append(hi)

    def _resolve_sigma2_prior(self):
        """Per-coordinate IG prior (a_tilde, b_tilde) with prior = IG(a~/2, b~/2).

        The configured prior is IG(a, scale); scale defaults to s_k / 200 with
        s_k the sample variance of the (transformed) response: raw values for
        continuous/binary/integer-count variables, log(y + 0.5) for log-count
        variables, and 1 for nominal utility coordinates.
        """
        a = float(self.config.sigma2_prior_a)
        scale_cfg = self.config.sigma2_prior_scale
        scales = np.empty(self.p)
        if isinstance(scale_cfg, str):
            if scale_cfg != "auto":
                raise ConfigError(f"bad sigma2_prior_scale {scale_cfg!r}")
            for j, v in enumerate(self.dataset.variables):
                lo, hi = self.layout.span(j)
                if v.kind == "nominal":
                    s = 1.0
                else:
                    y = self.responses[~self.miss_mask[:, j], j] if hasattr(self, "responses") \
                        else self.dataset.responses[~np.isnan(self.dataset.responses[:, j]), j]
                    if v.kind == "count" and v.cutpoint_style == "log":
                        y = np.log(y + 0.5)
                    s = float(np.var(y, ddof=1)) if y.size > 1 else 1.0
                    if not (s > 0 and np.isfinite(s)):
                        s = 1.0
                scales[lo:hi] = s / 200.0
        else:
            scales[:] = np.asarray(scale_cfg, dtype=float)
            if scales.shape != (self.p,):
                raise ConfigError("sigma2_prior_scale list must have one entry per latent coordinate")
        return np.full(self.p, 2.0 * a), 2.0 * scales

    # -- helpers -------------------------------------------------------------

    def workspace(self, name: str, shape) -> np.ndarray:
        """Persistent scratch buffer (avoids large re-allocations per sweep)."""
        if not hasattr(self, "_workspace"):
            self._workspace = {}
        buf = self._workspace.get(name)
        if buf is None or buf.shape != tuple(shape):
            buf = np.empty(shape)
            self._workspace[name] = buf
        return buf

    def sum_by_subject(self, values: np.ndarray) -> np.ndarray:
        """Sum observation-level rows into per-subject totals (zero-safe)."""
        if self.n_obs == 0:
            return np.zeros((self.n,) + values.shape[1:])
        csum = np.concatenate(
            [np.zeros((1,) + values.shape[1:]), np.cumsum(values, axis=0)]
        )
        return csum[self.subj_stops] - csum[self.subj_starts]

    def sum_by_time(self, values: np.ndarray) -> np.ndarray:
        """Sum observation-level rows into per-time-point totals."""
        out = np.zeros((self.T,) + values.shape[1:])
        np.add.at(out, self.obs_time_idx, values)
        return out


def sample_inverse_gamma(rng, shape, scale, size=None):
    """IG(a, b) with density prop. to x^{-a-1} exp(-b/x)."""
    return np.asarray(scale) / rng.gamma(shape, 1.0, size=size)


def component_mean(state: ChainState, h: int, x, mu_t, eta) -> np.ndarray:
    """Mean B_h x + Omega_h mu_t + Lambda_h eta for one observation."""
    return state.B[h] @ x + state.Omega[h] @ mu_t + state.Lambda[h] @ eta


def component_loglik(state: ChainState, h: int, ystar, x, mu_t, eta) -> float:
    """Log-density of one latent observation under component h (stable)."""
    sigma2 = state.sigma2[h]
    if np.any(sigma2 <= 0):
        raise NumericalError("non-positive sigma2")
    return float(gaussian_diag_loglik(ystar, component_mean(state, h, x, mu_t, eta), sigma2))


def latent_conditional_density(ystar, x, mu_t, eta, h: int, state: ChainState) -> float:
    """Log f(y*_ij | x_i, eta_ij, component h): diagonal Gaussian, log space."""
    return component_loglik(state, h, ystar, x, mu_t, eta)


def marginal_covariance(state: ChainState, h: int, x, t_idx: int) -> np.ndarray:
    """Model-implied covariance of y* at covariates x and time index t_idx.

    Lambda (V x)(V x)' Lambda' + Lambda xi_t xi_t' Lambda' + diag(sigma2);
    diagnostic use only.
    """
    lam = state.Lambda[h]
    vx = state.V[h] @ np.asarray(x, dtype=float)
    w = lam @ vx
    xi_t = state.xi[t_idx]
    lx = lam @ xi_t
    cov = np.outer(w, w) + lx @ lx.T + np.diag(state.sigma2[h])
    return 0.5 * (cov + cov.T)


# --- initialisation ----------------------------------------------------------

def _init_nominal_block(rng, observed_cat, d: int):
    """Feasible utility draws (m, d-1) for observed categories (m,)."""
    m = observed_cat.size
    u = rng.normal(size=(m, d - 1))
    ref = observed_cat == d - 1
    if ref.any():
        # reference observed: all free utilities non-positive
        u[ref] = links.truncated_normal(
            rng, np.zeros((int(ref.sum()), d - 1)), 1.0, -np.inf, 0.0
        )
    win = np.where(~ref)[0]
    if win.size:
        cats = observed_cat[win].astype(np.int64)
        others = u[win].copy()
        others[np.arange(win.size), cats] = -np.inf
        floor = np.maximum(others.max(axis=1), 0.0)
        u[win, cats] = links.truncated_normal(rng, 0.0, 1.0, floor, np.inf)
    return u


def init_ystar(problem: Problem, rng) -> np.ndarray:
    """Latent responses drawn coordinate-wise from the feasible region (mean 0, var 1)."""
    ystar = rng.normal(size=(problem.n_obs, problem.p))
    for j, v in enumerate(problem.dataset.variables):
        a, b = problem.layout.span(j)
        rows = problem.obs_rows[j]
        if rows.size == 0:
            continue
        if v.kind == "continuous":
            ystar[rows, a] = problem.responses[rows, j]
        elif v.kind in ("binary", "count"):
            ystar[rows, a] = links.truncated_normal(
                rng, 0.0, 1.0, problem.interval_lo[j], problem.interval_hi[j]
            )
        else:
            ystar[rows, a:b] = _init_nominal_block(
                rng, problem.responses[rows, j].astype(np.int64), v.n_categories
            )
    return ystar


def init_state(config: ModelConfig, dataset: PanelDataset, rng,
               problem: Problem = None) -> ChainState:
    """Initial chain state: allocations uniform, latents from feasible priors."""
    if problem is None:
        problem = Problem(config, dataset)
    H, p, L, Q = problem.H, problem.p, problem.L, problem.Q
    Lstar, Q_mu, Q_eta, T, n = problem.Lstar, problem.Q_mu, problem.Q_eta, problem.T, problem.n

    alpha = float(rng.gamma(config.alpha_prior_a, 1.0 / config.alpha_prior_b))
    v, log1mv = beta_with_log1m(rng, np.ones(H - 1), np.full(H - 1, alpha))
    pi = stick_weights_from_logs(v, log1mv)

    delta2 = sample_inverse_gamma(rng, 0.5, 0.5, size=(p, Lstar))
    U = rng.normal(size=(H, p, Lstar)) * np.sqrt(delta2)
    zeta2 = sample_inverse_gamma(rng, 0.5, 0.5, size=(Q, L))
    V = rng.normal(size=(H, Q, L)) * np.sqrt(zeta2)

    sigma2 = sample_inverse_gamma(
        rng, 0.5 * problem.sigma2_a_tilde, 0.5 * problem.sigma2_b_tilde, size=(H, p)
    )

    theta_x = []
    for c in dataset.covariates:
        theta_x.append(rng.dirichlet(np.ones(c.n_categories), size=H))

    kappa_idx = int((problem.kappa_grid.size - 1) // 2)
    chol = problem.gp_chol[kappa_idx]
    mu = chol @ rng.normal(size=(T, Q_mu))
    xi = np.einsum("ts,sqe->tqe", chol, rng.normal(size=(T, Q, Q_eta)))

    s = rng.integers(0, H, size=n)
    eta_star = rng.normal(size=n)
    eta_tilde = rng.normal(size=(n, Q_eta))

    cov_codes = dataset.cov_codes.copy()
    for l, c in enumerate(dataset.covariates):
        miss = problem.cov_missing[:, l]
        if miss.any():
            cov_codes[miss, l] = rng.integers(0, c.n_categories, size=int(miss.sum()))
    X = encode_covariates(dataset, cov_codes) if n else np.zeros((0, L))

    ystar = init_ystar(problem, rng)

    return ChainState(
        problem=problem, iteration=0, alpha=alpha, v=v, log1mv=log1mv, pi=pi,
        U=U, V=V, sigma2=sigma2, theta_x=theta_x, mu=mu, xi=xi,
        kappa_mu_idx=kappa_idx, kappa_xi_idx=kappa_idx,
        s=s, eta_star=eta_star, eta_tilde=eta_tilde, ystar=ystar,
        cov_codes=cov_codes, X=X, delta2=delta2, zeta2=zeta2,
    )


def prior_state(config: ModelConfig, dataset: PanelDataset, rng,
                problem: Problem = None) -> ChainState:
    """Exact generative draw: parameters, latents, covariates and data.

    Unlike `init_state` (whose allocations are uniform and whose latents are
    conditioned on the observed data), every quantity here comes from the
    model's own prior, and the observed table is replaced by a forward draw;
    the dataset supplies only the design (subjects, times, missingness).
    Used by joint-distribution validation.
    """
    if problem is None:
        problem = Problem(config, dataset)
    H, p, L, Q = problem.H, problem.p, problem.L, problem.Q
    Lstar, Q_mu, Q_eta, T, n = problem.Lstar, problem.Q_mu, problem.Q_eta, problem.T, problem.n

    alpha = float(rng.gamma(config.alpha_prior_a, 1.0 / config.alpha_prior_b))
    v, log1mv = beta_with_log1m(rng, np.ones(H - 1), np.full(H - 1, alpha))
    pi = stick_weights_from_logs(v, log1mv)

    delta2 = sample_inverse_gamma(rng, 0.5, 0.5, size=(p, Lstar))
    U = rng.normal(size=(H, p, Lstar)) * np.sqrt(delta2)
    zeta2 = sample_inverse_gamma(rng, 0.5, 0.5, size=(Q, L))
    V = rng.normal(size=(H, Q, L)) * np.sqrt(zeta2)
    sigma2 = sample_inverse_gamma(
        rng, 0.5 * problem.sigma2_a_tilde, 0.5 * problem.sigma2_b_tilde, size=(H, p)
    )
    theta_x = [rng.dirichlet(np.ones(c.n_categories), size=H)
               for c in dataset.covariates]

    kappa_mu_idx = int(rng.integers(problem.kappa_grid.size))
    kappa_xi_idx = int(rng.integers(problem.kappa_grid.size))
    mu = problem.gp_chol[kappa_mu_idx] @ rng.normal(size=(T, Q_mu))
    xi = np.einsum("ts,sqe->tqe", problem.gp_chol[kappa_xi_idx],
                   rng.normal(size=(T, Q, Q_eta)))

    cdf = np.cumsum(pi)
    s = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), H - 1)
    eta_star = rng.normal(size=n)
    eta_tilde = rng.normal(size=(n, Q_eta))

    cov_codes = np.zeros((n, len(dataset.covariates)), dtype=np.int64)
    for l, c in enumerate(dataset.covariates):
        probs = theta_x[l][s]
        u = rng.random(n)
        cov_codes[:, l] = np.minimum(
            (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), c.n_categories - 1
        )
    X = encode_covariates(dataset, cov_codes) if n else np.zeros((0, L))

    state = ChainState(
        problem=problem, iteration=0, alpha=alpha, v=v, log1mv=log1mv, pi=pi,
        U=U, V=V, sigma2=sigma2, theta_x=theta_x, mu=mu, xi=xi,
        kappa_mu_idx=kappa_mu_idx, kappa_xi_idx=kappa_xi_idx,
        s=s, eta_star=eta_star, eta_tilde=eta_tilde,
        ystar=np.zeros((problem.n_obs, p)),
        cov_codes=cov_codes, X=X, delta2=delta2, zeta2=zeta2,
    )
    from .gibbs import refresh_data  # data draw given the parameter state

    refresh_data(state, rng, covariates=False)
    return state
