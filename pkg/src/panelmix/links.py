"""Deterministic links between latent continuous coordinates and observations.

Each response kind maps its latent coordinates to an observed value:

  * continuous: identity;
  * binary: 1 iff the coordinate is positive;
  * count: the bin index r with a_r < y* <= a_{r+1} for increasing cutpoints
    a_0 = -inf < a_1 < a_2 < ...; "integer" style uses a_{r+1} = r, "log"
    style a_{r+1} = log(r + 0.5);
  * nominal with d categories: argmax over the d-1 free utilities and the
    implicit zero utility of the last (reference) category; ties resolve to
    the lowest category index.

The inverse region of an observed vector factorises into per-coordinate
intervals for ordered kinds and a cross-coordinate argmax constraint for
nominal blocks, which is what the sampler's coordinate-wise truncated-normal
updates exploit.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .schema import LatentLayout


class LinkError(ValueError):
    pass


class InfeasibleRegionError(RuntimeError):
    """Conditional feasible interval is empty: sampler state is corrupted."""


# --- cutpoints ---------------------------------------------------------------

@dataclass(frozen=True)
class CutpointRule:
    """Count cutpoint sequence a_r; style is "integer" or "log"."""

    style: str

    def upper(self, r):
        """a_{r+1} for r >= 0 (the upper edge of bin r)."""
        r = np.asarray(r, dtype=float)
        if self.style == "integer":
            return r
        return np.log(r + 0.5)

    def lower(self, r):
        """a_r (the lower edge of bin r); -inf at r = 0."""
        r = np.asarray(r, dtype=float)
        out = np.where(r <= 0, -np.inf, self.upper(np.maximum(r - 1, 0)))
        return out

    def bin_of(self, ystar):
        """Closed-form bin index: unique r with a_r < y* <= a_{r+1}."""
        ystar = np.asarray(ystar, dtype=float)
        if self.style == "integer":
            r = np.ceil(ystar)
            r = np.minimum(np.maximum(r, 0.0), 2.0**62)
            return r.astype(np.int64)
        r = np.ceil(np.exp(ystar) - 0.5)
        r = np.minimum(np.maximum(r, 0.0), 2.0**62)
        # exp() roundoff can land an exact cutpoint in the adjacent bin; nudge
        r = np.where((r > 0) & (ystar <= self.lower(r)), r - 1, r)
        r = np.where(ystar > self.upper(r), r + 1, r)
        return r.astype(np.int64)

    def bin_of_scan(self, ystar, r_max: int = 10_000) -> int:
        """Linear-scan oracle for `bin_of` (test reference)."""
        y = float(ystar)
        for r in range(r_max):
            if self.lower(r) < y <= self.upper(r):
                return r
        raise LinkError(f"value {y} beyond scan limit {r_max}")


def count_bounds(r, style: str):
    """(lo, hi] latent interval of count value r, vectorised."""
    rule = CutpointRule(style)
    r = np.asarray(r)
    return rule.lower(r), rule.upper(r)


# --- forward map g -----------------------------------------------------------

def to_observed(ystar, layout: LatentLayout) -> np.ndarray:
    """Apply g coordinate-block-wise; returns per-variable observed codes.

    Output is a float vector of length `layout.n_vars` (continuous value,
    0/1, count, or 0-based nominal category index).
    """
    ystar = np.asarray(ystar, dtype=float)
    if ystar.shape[-1] != layout.p:
        raise LinkError(f"latent vector has length {ystar.shape[-1]}, layout p={layout.p}")
    out = np.empty(ystar.shape[:-1] + (layout.n_vars,))
    for j, v in enumerate(layout.variables):
        start, stop = layout.span(j)
        block = ystar[..., start:stop]
        if v.kind == "continuous":
            out[..., j] = block[..., 0]
        elif v.kind == "binary":
            out[..., j] = (block[..., 0] > 0).astype(float)
        elif v.kind == "count":
            out[..., j] = CutpointRule(v.cutpoint_style).bin_of(block[..., 0]).astype(float)
        else:
            out[..., j] = nominal_category(block)
    return out


def nominal_category(utilities) -> np.ndarray:
    """Observed category (0-based) from the d-1 free utilities.

    The reference (last) category has utility 0; it wins iff every free
    utility is <= 0.  Ties go to the lowest index.
    """
    u = np.asarray(utilities, dtype=float)
    full = np.concatenate([u, np.zeros(u.shape[:-1] + (1,))], axis=-1)
    return np.argmax(full, axis=-1).astype(float)


# --- inverse regions ---------------------------------------------------------

@dataclass
class Region:
    """Latent region R(y) = {y*: g(y*) = y} for one observed vector.

    Ordered coordinates carry an interval (lo, hi]; the coordinates of a
    nominal block instead carry the argmax constraint encoded by
    `nominal_winner[j]`: the observed category index for variable j (or None
    when j is not nominal).  `lo`/`hi` for nominal coordinates are set to
    (-inf, +inf) and are not by themselves sufficient.
    """

    lo: np.ndarray
    hi: np.ndarray
    nominal_winner: list
    layout: LatentLayout

    def contains(self, ystar) -> bool:
        ystar = np.asarray(ystar, dtype=float)
        if not np.all((ystar > self.lo) & (ystar <= self.hi)):
            return False
        for j, winner in enumerate(self.nominal_winner):
            if winner is None:
                continue
            start, stop = self.layout.span(j)
            if int(nominal_category(ystar[start:stop])) != winner:
                return False
        return True


def latent_region(y, layout: LatentLayout) -> Region:
    """Inverse region of the observed vector y (per-variable codes)."""
    y = np.asarray(y, dtype=float)
    lo = np.full(layout.p, -np.inf)
    hi = np.full(layout.p, np.inf)
    winners = [None] * layout.n_vars
    for j, v in enumerate(layout.variables):
        start, stop = layout.span(j)
        val = y[j]
        if v.kind == "continuous":
            # degenerate: the identity link pins the coordinate
            lo[start] = np.nextafter(val, -np.inf)
            hi[start] = val
        elif v.kind == "binary":
            if val not in (0.0, 1.0):
                raise LinkError(f"binary value {val} invalid")
            if val == 1.0:
                lo[start] = 0.0
            else:
                hi[start] = 0.0
        elif v.kind == "count":
            if val < 0 or val != math.floor(val):
                raise LinkError(f"count value {val} invalid")
            lo[start], hi[start] = count_bounds(int(val), v.cutpoint_style)
        else:
            if val < 0 or val >= v.n_categories or val != math.floor(val):
                raise LinkError(f"nominal category {val} invalid for {v.name!r}")
            winners[j] = int(val)
    return Region(lo=lo, hi=hi, nominal_winner=winners, layout=layout)


# --- truncated normal sampling ----------------------------------------------

def truncated_normal(rng, mean, sd, lo, hi):
    """Draws from N(mean, sd^2) truncated to (lo, hi], vectorised.

    Inverse-CDF sampling with tail-stable evaluation: intervals entirely in
    one tail are mapped through the complementary CDF so the uniform is
    applied to well-scaled probabilities even far out (|z| up to ~37).
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    shape = np.broadcast_shapes(mean.shape, sd.shape, lo.shape, hi.shape)
    mean, sd, lo, hi = (np.broadcast_to(a, shape) for a in (mean, sd, lo, hi))
    if np.any(lo >= hi):
        raise InfeasibleRegionError("empty truncation interval")

    a = (lo - mean) / sd
    b = (hi - mean) / sd
    u = rng.random(shape)
    z = np.empty(shape)

    upper_tail = a > 0
    lower_tail = b < 0
    middle = ~(upper_tail | lower_tail)

    if np.any(upper_tail):
        # work with survival probabilities: both ndtr(-a), ndtr(-b) <= 0.5
        sa = ndtr(-a[upper_tail])
        sb = ndtr(-b[upper_tail])
        z[upper_tail] = -ndtri(sb + (sa - sb) * u[upper_tail])
    if np.any(lower_tail):
        pa = ndtr(a[lower_tail])
        pb = ndtr(b[lower_tail])
        z[lower_tail] = ndtri(pa + (pb - pa) * u[lower_tail])
    if np.any(middle):
        pa = ndtr(a[middle])
        pb = ndtr(b[middle])
        z[middle] = ndtri(pa + (pb - pa) * u[middle])

    # intervals so deep in a tail that both CDF values underflow: collapse to
    # the near boundary, where essentially all conditional mass sits
    bad = ~np.isfinite(z)
    if np.any(bad):
        z[bad & upper_tail] = a[bad & upper_tail]
        z[bad & lower_tail] = b[bad & lower_tail]
    # guard against roundoff pushing a draw onto an excluded boundary
    z = np.clip(z, np.nextafter(a, np.inf), b)
    return mean + sd * z


def conditional_interval(k: int, y, other_coords, layout: LatentLayout):
    """Feasible interval of coordinate k given y and the other coordinates.

    For binary/count coordinates this is the marginal interval from
    `latent_region`.  Inside a nominal block, the winning coordinate is
    bounded below by max(other free utilities, 0) and a losing coordinate is
    bounded above by the winner's utility (0 when the reference category is
    observed).
    """
    y = np.asarray(y, dtype=float)
    other = np.asarray(other_coords, dtype=float)
    j = next(jj for jj in range(layout.n_vars) if layout.starts[jj] <= k < layout.stops[jj])
    v = layout.variables[j]
    start, stop = layout.span(j)
    if v.kind != "nominal":
        region = latent_region(y, layout)
        return region.lo[k], region.hi[k]
    observed = int(y[j])
    block = other[start:stop].copy()
    local = k - start
    others = np.delete(block, local)
    if observed == v.n_categories - 1:
        # reference observed: every free utility must be <= 0
        return -np.inf, 0.0
    if observed == local:
        floor = max(others.max(initial=-np.inf), 0.0)
        return floor, np.inf
    winner_u = block[observed]
    return -np.inf, winner_u


def sample_latent_coordinate(k: int, y, other_coords, mean: float, var: float,
                             rng, layout: LatentLayout) -> float:
    """Draw coordinate k from N(mean, var) restricted to its feasible interval."""
    if not var > 0:
        raise LinkError(f"variance must be positive, got {var}")
    lo, hi = conditional_interval(k, y, other_coords, layout)
    if not lo < hi:
        raise InfeasibleRegionError(
            f"coordinate {k}: empty interval ({lo}, {hi}] for observation {y}"
        )
    return float(truncated_normal(rng, mean, math.sqrt(var), lo, hi))
