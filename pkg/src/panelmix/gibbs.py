"""Blocked Gibbs sampler: the full-conditional sweep and chain orchestration.

Each sweep cycles through the update blocks in a fixed order: stick weights
and concentration, allocations, noise variances, loading rows, subject
factors, kernel length-scales (Griddy-Gibbs over a grid), covariance-regression
columns, time-effect columns, covariate multinomials, imputation of missing
covariates and responses, constrained latent-response redraws, and shrinkage
scales.  Survey-adjusted mixture weights are drawn only on saved sweeps.

Every Gaussian full conditional is exposed through a `*_posterior` helper
returning its natural parameters (precision and linear term, or mean and
variance); the update functions draw from exactly those parameters, so tests
can verify each conditional against independent dense linear algebra.

Categoricals (allocations, Griddy-Gibbs, covariate imputation) are always
normalised through log-sum-exp; with H = 60 components and long panels the
direct-space products underflow.
"""

import math

import numpy as np
from scipy.special import logsumexp

from . import links, survey
from .dataset import encode_code_rows
from .draws import DrawRecord, DrawsMeta, DrawsWriter, schema_fingerprint
from .model import (
    ChainState,
    ModelConfig,
    NumericalError,
    Problem,
    beta_with_log1m,
    gaussian_diag_loglik,
    init_state,
    sample_inverse_gamma,
    stick_weights_from_logs,
)


# --- state-derived quantities -------------------------------------------------

def s_obs(state: ChainState) -> np.ndarray:
    """Component index per observation row."""
    return state.s[state.problem.obs_subject]


def vx_subjects(state: ChainState) -> np.ndarray:
    """(n, Q) rows V_{s_i} x_i."""
    return np.einsum("nql,nl->nq", state.V[state.s], state.X)


def xi_eta_obs(state: ChainState) -> np.ndarray:
    """(n_obs, Q) rows xi_{t_ij} etatilde_i (component independent)."""
    P = state.problem
    return np.einsum(
        "oqe,oe->oq", state.xi[P.obs_time_idx], state.eta_tilde[P.obs_subject]
    )


def eta_obs(state: ChainState) -> np.ndarray:
    """(n_obs, Q) dynamic factors eta_ij at the current allocations."""
    P = state.problem
    return (
        vx_subjects(state)[P.obs_subject] * state.eta_star[P.obs_subject, None]
        + xi_eta_obs(state)
    )


def obs_means(state: ChainState, eta: np.ndarray = None) -> np.ndarray:
    """(n_obs, p) conditional means B x + Omega mu_t + Lambda eta."""
    P = state.problem
    so = s_obs(state)
    if eta is None:
        eta = eta_obs(state)
    # Omega_h mu_t depends on the observation only through (t, h): tabulate
    om_mu = np.einsum("hpq,tq->thp", state.Omega, state.mu)
    m = np.einsum("npl,nl->np", state.B[state.s], state.X)[P.obs_subject]
    m = m + om_mu[P.obs_time_idx, so]
    m = m + np.einsum("opq,oq->op", state.Lambda[so], eta)
    return m


def residuals(state: ChainState) -> np.ndarray:
    return state.ystar - obs_means(state)


def _component_groups(state: ChainState):
    so = s_obs(state)
    order = np.argsort(so, kind="stable")
    bounds = np.searchsorted(so[order], np.arange(state.problem.H + 1))
    return order, bounds


def _component_sums(values: np.ndarray, order, bounds) -> np.ndarray:
    v = values[order]
    csum = np.concatenate([np.zeros((1,) + v.shape[1:]), np.cumsum(v, axis=0)])
    return csum[bounds[1:]] - csum[bounds[:-1]]


# --- linear algebra helpers ---------------------------------------------------

def robust_cholesky(mats: np.ndarray) -> np.ndarray:
    """Batched Cholesky with a jitter retry (1e-8 then 1e-6, diagonal-scaled)."""
    mats = np.asarray(mats)
    d = mats.shape[-1]
    if d == 0:
        return mats.copy()
    scale = np.mean(np.diagonal(mats, axis1=-2, axis2=-1), axis=-1)
    scale = np.maximum(scale, 1.0)
    eye = np.eye(d)
    for jit in (0.0, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(mats + jit * scale[..., None, None] * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("precision matrix not positive definite after jitter retries")


def draw_mvn_from_precision(rng, prec: np.ndarray, lin: np.ndarray):
    """Draw from N(prec^{-1} lin, prec^{-1}); batched over leading axes.

    Returns (draw, mean); Cholesky-based, no explicit inverse.
    """
    L = robust_cholesky(prec)
    Lt = np.swapaxes(L, -1, -2)
    half = np.linalg.solve(L, lin[..., None])
    mean = np.linalg.solve(Lt, half)[..., 0]
    z = rng.standard_normal(mean.shape)
    noise = np.linalg.solve(Lt, z[..., None])[..., 0]
    return mean + noise, mean


def _sample_categorical_rows(rng, log_probs: np.ndarray) -> np.ndarray:
    """One index per row of normalised log-probabilities."""
    probs = np.exp(log_probs)
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[..., -1:]
    u = rng.random(log_probs.shape[:-1])
    idx = (cdf < u[..., None]).sum(axis=-1)
    return np.minimum(idx, log_probs.shape[-1] - 1)


# --- steps 1-2: stick weights and concentration --------------------------------

def sticks_posterior(state: ChainState):
    """Beta(a_h, b_h) parameters for v_1..v_{H-1} given the allocations."""
    P = state.problem
    counts = np.bincount(state.s, minlength=P.H).astype(float)
    n_ge = counts[::-1].cumsum()[::-1]
    n_gt = np.concatenate([n_ge[1:], [0.0]])
    a = 1.0 + counts[: P.H - 1]
    b = state.alpha + n_gt[: P.H - 1]
    return a, b


def alpha_posterior(state: ChainState):
    """Gamma(shape, rate) for the concentration given current sticks."""
    cfg = state.problem.config
    shape = cfg.alpha_prior_a + state.problem.H - 1
    rate = cfg.alpha_prior_b - float(np.sum(state.log1mv))
    return shape, rate


def update_sticks_and_alpha(state: ChainState, rng) -> None:
    a, b = sticks_posterior(state)
    state.v, state.log1mv = beta_with_log1m(rng, a, b)
    shape, rate = alpha_posterior(state)
    state.alpha = float(rng.gamma(shape, 1.0 / rate))
    state.pi = stick_weights_from_logs(state.v, state.log1mv)


# --- step 3: allocations --------------------------------------------------------

def allocation_logprobs(state: ChainState) -> np.ndarray:
    """Normalised log P(s_i = h | ...) of shape (n, H).

    With allocation_eta = "recompute" the dynamic factors are re-evaluated
    with each candidate component's V_h; with "freeze" they stay at the
    current allocation's values.
    """
    P = state.problem
    H, p = P.H, P.p
    with np.errstate(divide="ignore"):  # zero-mass components map to -inf
        logits = np.tile(np.log(state.pi), (P.n, 1))
        for l, theta in enumerate(state.theta_x):
            logits += np.log(theta[:, state.cov_codes[:, l]]).T
    if P.n_obs:
        lam_flat = state.Lambda.reshape(H * p, P.Q)
        scratch = P.workspace("alloc_scratch", (P.n_obs, H * p))
        m = P.workspace("alloc_mean", (P.n_obs, H * p))
        if P.config.allocation_eta == "recompute":
            lam_v = np.einsum("hpq,hql->hpl", state.Lambda, state.V)
            W1 = np.concatenate([state.B, lam_v], axis=2).reshape(H * p, 2 * P.L)
            xhat = np.concatenate([state.X, state.X * state.eta_star[:, None]], axis=1)
            sub = xhat @ W1.T                                   # (n, H p)
            np.matmul(xi_eta_obs(state), lam_flat.T, out=scratch)
        else:
            sub = state.X @ state.B.reshape(H * p, P.L).T
            np.matmul(eta_obs(state), lam_flat.T, out=scratch)
        np.take(sub, P.obs_subject, axis=0, out=m)
        m += scratch
        time_part = state.mu @ state.Omega.reshape(H * p, P.Q_mu).T   # (T, H p)
        np.take(time_part, P.obs_time_idx, axis=0, out=scratch)
        m += scratch
        m = m.reshape(P.n_obs, H, p)
        m -= state.ystar[:, None, :]
        np.square(m, out=m)
        quad = np.einsum("ohp,hp->oh", m, 1.0 / state.sigma2)
        logdet = np.sum(np.log(2.0 * math.pi * state.sigma2), axis=1)
        logits += P.sum_by_subject(-0.5 * (quad + logdet[None, :]))
    norm = logsumexp(logits, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericalError("allocation probabilities vanished for some subject")
    return logits - norm


def update_allocations(state: ChainState, rng) -> None:
    logits = allocation_logprobs(state)
    state.s = _sample_categorical_rows(rng, logits).astype(np.int64)


# --- step 4: noise variances ----------------------------------------------------

def sigma2_posterior(state: ChainState):
    """IG(shape, scale) arrays of shape (H, p)."""
    P = state.problem
    order, bounds = _component_groups(state)
    res = residuals(state)
    ss = _component_sums(res * res, order, bounds)
    m = np.diff(bounds).astype(float)
    shape = 0.5 * (m[:, None] + P.sigma2_a_tilde[None, :])
    scale = 0.5 * (ss + P.sigma2_b_tilde[None, :])
    return shape, scale


def update_variances(state: ChainState, rng) -> None:
    shape, scale = sigma2_posterior(state)
    state.sigma2 = sample_inverse_gamma(rng, shape, scale)


# --- step 5: loading rows U_{hk.} ------------------------------------------------

def loading_row_posterior(state: ChainState):
    """Gaussian full conditionals for all rows: precision (H,p,L*,L*), linear (H,p,L*)."""
    P = state.problem
    Z = np.concatenate(
        [state.X[P.obs_subject], state.mu[P.obs_time_idx], eta_obs(state)], axis=1
    )
    order, bounds = _component_groups(state)
    Zs, Ys = Z[order], state.ystar[order]
    G = np.zeros((P.H, P.Lstar, P.Lstar))
    R = np.zeros((P.H, P.Lstar, P.p))
    for h in range(P.H):
        lo, hi = bounds[h], bounds[h + 1]
        if lo == hi:
            continue
        Zh = Zs[lo:hi]
        G[h] = Zh.T @ Zh
        R[h] = Zh.T @ Ys[lo:hi]
    inv_s2 = 1.0 / state.sigma2
    prior_prec = np.zeros((P.p, P.Lstar, P.Lstar))
    idx = np.arange(P.Lstar)
    prior_prec[:, idx, idx] = 1.0 / state.delta2
    prec = G[:, None, :, :] * inv_s2[:, :, None, None] + prior_prec[None]
    lin = np.swapaxes(R, 1, 2) * inv_s2[:, :, None]
    return prec, lin


def update_loading_rows(state: ChainState, rng) -> None:
    prec, lin = loading_row_posterior(state)
    draw, _ = draw_mvn_from_precision(rng, prec, lin)
    state.U = draw


# --- steps 6-7: subject factors ---------------------------------------------------

def eta_star_posterior(state: ChainState):
    """Scalar Gaussian full conditionals: (mean (n,), var (n,))."""
    P = state.problem
    lam_v = np.einsum("hpq,hql->hpl", state.Lambda, state.V)
    u = np.einsum("npl,nl->np", lam_v[state.s], state.X)
    inv_s2 = 1.0 / state.sigma2[state.s]
    g = np.einsum("np,np,np->n", u, u, inv_s2)
    var = 1.0 / (P.n_i * g + 1.0)
    yhat = residuals(state) + u[P.obs_subject] * state.eta_star[P.obs_subject, None]
    S = P.sum_by_subject(yhat)
    mean = var * np.einsum("np,np,np->n", u, inv_s2, S)
    return mean, var


def eta_tilde_posterior(state: ChainState):
    """Gaussian full conditionals: precision (n, Q_eta, Q_eta), linear (n, Q_eta)."""
    P = state.problem
    so = s_obs(state)
    W = np.einsum("opq,oqe->ope", state.Lambda[so], state.xi[P.obs_time_idx])
    Winv = W * (1.0 / state.sigma2[so])[:, :, None]
    prec = P.sum_by_subject(np.einsum("ope,opf->oef", Winv, W)) + np.eye(P.Q_eta)[None]
    yhat = residuals(state) + np.einsum(
        "ope,oe->op", W, state.eta_tilde[P.obs_subject]
    )
    lin = P.sum_by_subject(np.einsum("ope,op->oe", Winv, yhat))
    return prec, lin


def update_subject_factors(state: ChainState, rng) -> None:
    mean, var = eta_star_posterior(state)
    state.eta_star = mean + np.sqrt(var) * rng.standard_normal(state.problem.n)
    prec, lin = eta_tilde_posterior(state)
    draw, _ = draw_mvn_from_precision(rng, prec, lin)
    state.eta_tilde = draw


# --- steps 8-9: Griddy-Gibbs kernel length-scales ----------------------------------

def kappa_log_masses(state: ChainState, columns: np.ndarray) -> np.ndarray:
    """Unnormalised log grid masses for GP-distributed columns (T, m)."""
    P = state.problem
    if P.T == 0:
        return np.zeros(P.kappa_grid.size)
    cols = np.asarray(columns, dtype=float).reshape(P.T, -1)
    m = cols.shape[1]
    sol = np.linalg.solve(P.gp_chol, np.broadcast_to(cols, (P.kappa_grid.size,) + cols.shape))
    quad = np.einsum("gtm,gtm->g", sol, sol)
    return -0.5 * (quad + m * (P.gp_logdet + P.T * math.log(2.0 * math.pi)))


def update_kappas(state: ChainState, rng) -> None:
    P = state.problem
    lm = kappa_log_masses(state, state.mu)
    state.kappa_mu_idx = int(_sample_categorical_rows(rng, lm - logsumexp(lm)))
    xi_cols = state.xi.reshape(P.T, -1) if P.T else state.xi
    lm = kappa_log_masses(state, xi_cols)
    state.kappa_xi_idx = int(_sample_categorical_rows(rng, lm - logsumexp(lm)))


# --- step 10: covariance-regression columns V_{h.l} --------------------------------

def V_col_posterior(state: ChainState, l: int, res: np.ndarray = None):
    """Gaussian full conditionals for column l: precision (H,Q,Q), linear (H,Q).

    `res` is the current full residual (recomputed when omitted); the
    returned `yhat` adds column l's contribution back in.
    """
    P = state.problem
    if res is None:
        res = residuals(state)
    inv_s2 = 1.0 / state.sigma2
    M = np.einsum("hpq,hp,hpr->hqr", state.Lambda, inv_s2, state.Lambda)
    beta = state.X[:, l] * state.eta_star
    wcol = np.einsum("hpq,hq->hp", state.Lambda, state.V[:, :, l])
    yhat = res + wcol[s_obs(state)] * beta[P.obs_subject][:, None]
    S = P.sum_by_subject(yhat)
    Th = np.zeros((P.H, P.p))
    np.add.at(Th, state.s, beta[:, None] * S)
    S1 = np.bincount(state.s, weights=P.n_i * beta * beta, minlength=P.H)
    prior = np.zeros((P.Q, P.Q))
    idx = np.arange(P.Q)
    prior[idx, idx] = 1.0 / state.zeta2[:, l]
    prec = S1[:, None, None] * M + prior[None]
    lin = np.einsum("hpq,hp,hp->hq", state.Lambda, inv_s2, Th)
    return prec, lin, yhat


def update_V_columns(state: ChainState, rng) -> None:
    P = state.problem
    res = residuals(state)
    for l in range(P.L):
        prec, lin, yhat = V_col_posterior(state, l, res)
        draw, _ = draw_mvn_from_precision(rng, prec, lin)
        state.V[:, :, l] = draw
        wcol = np.einsum("hpq,hq->hp", state.Lambda, state.V[:, :, l])
        beta = state.X[:, l] * state.eta_star
        res = yhat - wcol[s_obs(state)] * beta[P.obs_subject][:, None]


# --- steps 11-12: time-effect columns ------------------------------------------------

def _time_effect_ctx(state: ChainState) -> dict:
    """Observation-level gathers shared by the per-column time-effect updates."""
    P = state.problem
    so = s_obs(state)
    return {
        "om_so": state.Omega[so],
        "lam_so": state.Lambda[so],
        "inv": 1.0 / state.sigma2[so],
        "etat": state.eta_tilde[P.obs_subject],
    }


def mu_col_posterior(state: ChainState, q: int, res: np.ndarray = None, ctx: dict = None):
    """T-dimensional Gaussian full conditional of mu_{.q}: (prec, lin, yhat, om)."""
    P = state.problem
    if res is None:
        res = residuals(state)
    if ctx is None:
        ctx = _time_effect_ctx(state)
    om = ctx["om_so"][:, :, q]
    inv = ctx["inv"]
    a = P.sum_by_time(np.einsum("op,op,op->o", om, om, inv))
    yhat = res + om * state.mu[P.obs_time_idx, q][:, None]
    b = P.sum_by_time(np.einsum("op,op,op->o", om, inv, yhat))
    prec = np.diag(a) + P.gp_prec[state.kappa_mu_idx]
    return prec, b, yhat, om


def xi_col_posterior(state: ChainState, q: int, e: int, res: np.ndarray = None,
                     ctx: dict = None):
    """T-dimensional Gaussian full conditional of xi_{.qe}: (prec, lin, yhat, lam_eta)."""
    P = state.problem
    if res is None:
        res = residuals(state)
    if ctx is None:
        ctx = _time_effect_ctx(state)
    lam = ctx["lam_so"][:, :, q]
    inv = ctx["inv"]
    etal = ctx["etat"][:, e]
    a = P.sum_by_time(np.einsum("op,op,op->o", lam, lam, inv) * etal * etal)
    lam_eta = lam * etal[:, None]
    yhat = res + lam_eta * state.xi[P.obs_time_idx, q, e][:, None]
    b = P.sum_by_time(np.einsum("op,op,op->o", lam, inv, yhat) * etal)
    prec = np.diag(a) + P.gp_prec[state.kappa_xi_idx]
    return prec, b, yhat, lam_eta


def update_time_effects(state: ChainState, rng) -> None:
    P = state.problem
    res = residuals(state)
    ctx = _time_effect_ctx(state)
    for q in range(P.Q_mu):
        prec, lin, yhat, om = mu_col_posterior(state, q, res, ctx)
        draw, _ = draw_mvn_from_precision(rng, prec, lin)
        state.mu[:, q] = draw
        res = yhat - om * state.mu[P.obs_time_idx, q][:, None]
    for q in range(P.Q):
        for e in range(P.Q_eta):
            prec, lin, yhat, lam_eta = xi_col_posterior(state, q, e, res, ctx)
            draw, _ = draw_mvn_from_precision(rng, prec, lin)
            state.xi[:, q, e] = draw
            res = yhat - lam_eta * state.xi[P.obs_time_idx, q, e][:, None]


# --- step 13: covariate multinomials ---------------------------------------------------

def theta_x_posterior(state: ChainState, l: int) -> np.ndarray:
    """Dirichlet concentrations (H, d_l): flat-prior 1 plus in-component counts."""
    P = state.problem
    d = P.dataset.covariates[l].n_categories
    conc = np.ones((P.H, d))
    np.add.at(conc, (state.s, state.cov_codes[:, l]), 1.0)
    return conc


def update_covariate_params(state: ChainState, rng) -> None:
    for l in range(len(state.theta_x)):
        conc = theta_x_posterior(state, l)
        g = np.maximum(rng.gamma(conc, 1.0), 1e-300)
        state.theta_x[l] = g / g.sum(axis=1, keepdims=True)


# --- steps 14-15: imputation -------------------------------------------------------------

def covariate_imputation_logprobs(state: ChainState, l: int, miss: np.ndarray) -> np.ndarray:
    """Normalised log P(x_il = c | ...) for the subjects in `miss` (shape (m, d))."""
    P = state.problem
    d = P.dataset.covariates[l].n_categories
    sm = state.s[miss]
    logits = np.log(state.theta_x[l][sm, :])
    spans = [np.arange(P.subj_starts[i], P.subj_stops[i]) for i in miss]
    rows = np.concatenate(spans) if spans else np.empty(0, dtype=np.int64)
    if rows.size:
        owner = np.repeat(np.arange(miss.size), [len(r) for r in spans])
        srows = sm[owner]
        tidx = P.obs_time_idx[rows]
        xi_eta = np.einsum("oqe,oe->oq", state.xi[tidx], state.eta_tilde[miss][owner])
        om_mu = np.einsum("opq,oq->op", state.Omega[srows], state.mu[tidx])
        ys = state.ystar[rows]
        sig = state.sigma2[srows]
        for cand in range(d):
            codes = state.cov_codes[miss].copy()
            codes[:, l] = cand
            Xc = encode_code_rows(P.dataset.covariates, codes)
            Bx = np.einsum("mpl,ml->mp", state.B[sm], Xc)
            Vx = np.einsum("mql,ml->mq", state.V[sm], Xc)
            eta = Vx[owner] * state.eta_star[miss][owner, None] + xi_eta
            mean = Bx[owner] + om_mu + np.einsum("opq,oq->op", state.Lambda[srows], eta)
            ll = gaussian_diag_loglik(ys, mean, sig)
            logits[:, cand] += np.bincount(owner, weights=ll, minlength=miss.size)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def _impute_covariates(state: ChainState, rng) -> None:
    P = state.problem
    if not P.cov_missing.any():
        return
    for l in range(len(P.dataset.covariates)):
        miss = np.where(P.cov_missing[:, l])[0]
        if miss.size == 0:
            continue
        logits = covariate_imputation_logprobs(state, l, miss)
        state.cov_codes[miss, l] = _sample_categorical_rows(rng, logits)
    changed = P.cov_missing.any(axis=1)
    state.X[changed] = encode_code_rows(P.dataset.covariates, state.cov_codes[changed])


def _impute_responses(state: ChainState, rng) -> None:
    P = state.problem
    if not P.miss_mask.any():
        return
    means = obs_means(state)
    sd = np.sqrt(state.sigma2[s_obs(state)])
    for j in range(P.layout.n_vars):
        rows = P.miss_rows[j]
        if rows.size == 0:
            continue
        a, b = P.layout.span(j)
        state.ystar[rows, a:b] = means[rows, a:b] + sd[rows, a:b] * rng.standard_normal(
            (rows.size, b - a)
        )


def impute_missing(state: ChainState, rng) -> None:
    _impute_covariates(state, rng)
    _impute_responses(state, rng)


# --- step 16: constrained latent responses -------------------------------------------------

def update_latent_responses(state: ChainState, rng) -> None:
    """Redraw observed latent coordinates inside their feasible regions.

    Continuous coordinates are pinned to the observed values (identity link);
    nominal blocks are updated coordinate-wise so each truncation uses the
    other utilities' current values.
    """
    P = state.problem
    means = obs_means(state)
    sd = np.sqrt(state.sigma2[s_obs(state)])
    for j, v in enumerate(P.dataset.variables):
        rows = P.obs_rows[j]
        if rows.size == 0:
            continue
        a, b = P.layout.span(j)
        if v.kind == "continuous":
            state.ystar[rows, a] = P.responses[rows, j]
        elif v.kind in ("binary", "count"):
            state.ystar[rows, a] = links.truncated_normal(
                rng, means[rows, a], sd[rows, a], P.interval_lo[j], P.interval_hi[j]
            )
        else:
            cats = P.responses[rows, j].astype(np.int64)
            d = v.n_categories
            ref = cats == d - 1
            for c in range(d - 1):
                k = a + c
                block = state.ystar[rows, a:b]
                lo = np.full(rows.size, -np.inf)
                hi = np.full(rows.size, np.inf)
                hi[ref] = 0.0
                winner = cats == c
                if winner.any():
                    others = block.copy()
                    others[:, c] = -np.inf
                    lo[winner] = np.maximum(others.max(axis=1)[winner], 0.0)
                loser = ~ref & ~winner
                if loser.any():
                    rows_l = np.where(loser)[0]
                    hi[loser] = block[rows_l, cats[rows_l]]
                state.ystar[rows, k] = links.truncated_normal(
                    rng, means[rows, k], sd[rows, k], lo, hi
                )


# --- steps 17-18: shrinkage scales -----------------------------------------------------------

def shrinkage_posterior(state: ChainState):
    """IG parameters for delta2 (p, L*) and zeta2 (Q, L), pooled over components."""
    H = state.problem.H
    shape = 0.5 * (H + 1)
    scale_delta = 0.5 * (np.sum(state.U * state.U, axis=0) + 1.0)
    scale_zeta = 0.5 * (np.sum(state.V * state.V, axis=0) + 1.0)
    return shape, scale_delta, scale_zeta


def update_shrinkage(state: ChainState, rng) -> None:
    shape, scale_delta, scale_zeta = shrinkage_posterior(state)
    state.delta2 = sample_inverse_gamma(rng, np.full_like(scale_delta, shape), scale_delta)
    state.zeta2 = sample_inverse_gamma(rng, np.full_like(scale_zeta, shape), scale_zeta)


# --- sweep and invariants ----------------------------------------------------------------------

def sweep(state: ChainState, rng) -> None:
    """One full pass over the update blocks, in the fixed step order."""
    update_sticks_and_alpha(state, rng)
    update_allocations(state, rng)
    update_variances(state, rng)
    update_loading_rows(state, rng)
    update_subject_factors(state, rng)
    update_kappas(state, rng)
    update_V_columns(state, rng)
    update_time_effects(state, rng)
    update_covariate_params(state, rng)
    impute_missing(state, rng)
    update_latent_responses(state, rng)
    update_shrinkage(state, rng)
    state.iteration += 1
    if state.problem.config.debug_checks:
        check_invariants(state)


def check_invariants(state: ChainState) -> None:
    """Simplex and feasibility invariants; raises NumericalError on violation."""
    P = state.problem
    if abs(state.pi.sum() - 1.0) > 1e-12:
        raise NumericalError("mixture weights do not sum to 1")
    for theta in state.theta_x:
        if np.max(np.abs(theta.sum(axis=1) - 1.0)) > 1e-12:
            raise NumericalError("covariate multinomial rows do not sum to 1")
    codes = links.to_observed(state.ystar, P.layout)
    for j, v in enumerate(P.dataset.variables):
        rows = P.obs_rows[j]
        if rows.size == 0:
            continue
        got, want = codes[rows, j], P.responses[rows, j]
        ok = got == want if v.kind != "continuous" else np.isclose(got, want, rtol=0, atol=0)
        if not np.all(ok):
            raise NumericalError(f"latent state left the feasible region for {v.name!r}")


def refresh_data(state: ChainState, rng, covariates: bool = True) -> None:
    """Replace the observed data with a forward draw from the current state.

    Used by joint-distribution (prior/posterior consistency) validation: the
    missingness pattern is retained; non-missing covariate entries are redrawn
    from the component multinomials, then responses through the links.  The
    problem's link caches are rebuilt.
    """
    P = state.problem
    if covariates and P.n:
        for l, c in enumerate(P.dataset.covariates):
            observed = ~P.cov_missing[:, l]
            if not observed.any():
                continue
            probs = state.theta_x[l][state.s[observed]]
            u = rng.random(int(observed.sum()))
            state.cov_codes[observed, l] = np.minimum(
                (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1),
                c.n_categories - 1,
            )
        state.X = encode_code_rows(P.dataset.covariates, state.cov_codes)
    means = obs_means(state)
    sd = np.sqrt(state.sigma2[s_obs(state)])
    state.ystar = means + sd * rng.standard_normal(means.shape)
    codes = links.to_observed(state.ystar, P.layout)
    P.set_responses(np.where(P.miss_mask, np.nan, codes))


def refresh_responses(state: ChainState, rng) -> None:
    """Forward-draw only the responses, keeping covariates fixed."""
    refresh_data(state, rng, covariates=False)


def state_loglik(state: ChainState) -> float:
    """Total Gaussian log-density of y* given current parameters (trace scalar)."""
    if state.problem.n_obs == 0:
        return 0.0
    res = residuals(state)
    sig = state.sigma2[s_obs(state)]
    return float(np.sum(gaussian_diag_loglik(state.ystar, state.ystar - res, sig)))


# --- chain driver --------------------------------------------------------------------------------

TRACE_PARAMS = ("alpha", "kappa_mu", "kappa_xi", "n_occupied", "loglik")


def _trace_values(state: ChainState) -> dict:
    return {
        "alpha": state.alpha,
        "kappa_mu": state.kappa_mu,
        "kappa_xi": state.kappa_xi,
        "n_occupied": float(np.unique(state.s).size) if state.s.size else 0.0,
        "loglik": state_loglik(state),
    }


def run_chain(config: ModelConfig, dataset, rng, *, draws_path=None, trace_path=None,
              chain_seed=(), progress=None, dump_dir=None):
    """Run one chain; returns the list of saved DrawRecord snapshots.

    Sweeps `config.burnin + config.iterations` times; every `config.thin`-th
    post-burn-in sweep is saved together with a fresh draw of the adjusted
    mixture weights.  `draws_path` / `trace_path` enable persistence; a
    numerical failure dumps the state next to `draws_path` (or `dump_dir`)
    and re-raises.
    """
    problem = Problem(config, dataset)
    state = init_state(config, dataset, rng, problem)
    summary = survey.WeightSummary.from_weights(
        dataset.weights, dataset.population_size, config.H, config.prior_mass_fraction
    )

    writer = None
    if draws_path is not None:
        meta = DrawsMeta(
            variables=dataset.variables,
            covariates=dataset.covariates,
            population_size=dataset.population_size,
            n_subjects=dataset.n,
            time_grid=problem.time_grid,
            dims={
                "H": problem.H, "p": problem.p, "L": problem.L, "Lstar": problem.Lstar,
                "Q": problem.Q, "Q_mu": problem.Q_mu, "Q_eta": problem.Q_eta, "T": problem.T,
            },
            config=config.to_dict(),
            config_hash=config.hash(),
            schema_hash=schema_fingerprint(
                dataset.variables, dataset.covariates, dataset.population_size
            ),
            chain_seed=list(chain_seed),
        )
        writer = DrawsWriter(draws_path, meta)
    trace_fh = open(trace_path, "w") if trace_path is not None else None
    if trace_fh:
        trace_fh.write("iter,param,value\n")

    records = []
    total = config.burnin + config.iterations
    try:
        for it in range(1, total + 1):
            try:
                sweep(state, rng)
            except NumericalError as err:
                dump = _dump_state(state, draws_path, dump_dir)
                raise NumericalError(f"{err} (iteration {it}; state dump: {dump})") from err
            if trace_fh:
                for name, value in _trace_values(state).items():
                    trace_fh.write(f"{it},{name},{value!r}\n")
            if it > config.burnin and (it - config.burnin) % config.thin == 0:
                pi_tilde = survey.adjusted_weights(state.s, dataset.weights, summary, rng)
                rec = DrawRecord(
                    iteration=it,
                    pi_tilde=pi_tilde,
                    pi=state.pi.copy(),
                    U=state.U.copy(),
                    V=state.V.copy(),
                    sigma2=state.sigma2.copy(),
                    theta_x=[t.copy() for t in state.theta_x],
                    mu=state.mu.copy(),
                    xi=state.xi.copy(),
                    kappa_mu=state.kappa_mu,
                    kappa_xi=state.kappa_xi,
                    alpha=state.alpha,
                )
                records.append(rec)
                if writer:
                    writer.append(rec)
            if progress and it % progress == 0:
                print(f"sweep {it}/{total}", flush=True)
    finally:
        if writer:
            writer.close()
        if trace_fh:
            trace_fh.close()
    return records


def _dump_state(state: ChainState, draws_path, dump_dir) -> str:
    import os

    base = dump_dir or (os.path.dirname(str(draws_path)) if draws_path else ".")
    path = os.path.join(base or ".", f"statedump_iter{state.iteration}.npz")
    try:
        np.savez(
            path, s=state.s, alpha=state.alpha, v=state.v, U=state.U, V=state.V,
            sigma2=state.sigma2, mu=state.mu, xi=state.xi, ystar=state.ystar,
            eta_star=state.eta_star, eta_tilde=state.eta_tilde,
            delta2=state.delta2, zeta2=state.zeta2, iteration=state.iteration,
        )
    except OSError:
        return "<unwritable>"
    return path
