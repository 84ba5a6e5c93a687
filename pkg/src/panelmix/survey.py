"""Survey-weight machinery: normalisation, adjusted mixture weights, resampling.

Weights are proportional to inverse inclusion probabilities, so w_i / c with
c = sum(w) / N rescales each respondent to the number of population members
they represent; the adjusted mixture weights are a Dirichlet draw whose
concentration replaces unit counts with these population-scale masses.  With
a census (N = n, w_i = 1) the concentration reduces to the standard
unweighted posterior a_h + n_h exactly.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightSummary:
    """Normalisation constants for one sample."""

    c: float                   # sum(w) / N
    w_tilde: np.ndarray        # w / sum(w), sums to 1
    prior_mass: np.ndarray     # Dirichlet prior a_1..a_H, sums to fraction * N

    @classmethod
    def from_weights(cls, weights, population_size: int, H: int,
                     prior_mass_fraction: float = 0.01) -> "WeightSummary":
        w = np.asarray(weights, dtype=float)
        if w.size and not np.all(w > 0):
            raise ValueError("weights must be positive")
        total = float(w.sum())
        c = total / population_size if w.size else 1.0
        w_tilde = w / total if w.size else w
        mass = prior_mass_fraction * population_size / H
        return cls(c=c, w_tilde=w_tilde, prior_mass=np.full(H, mass))


def adjusted_concentration(allocations, weights, summary: WeightSummary) -> np.ndarray:
    """Dirichlet concentration a_h + sum_{i: s_i = h} w_i / c."""
    H = summary.prior_mass.size
    s = np.asarray(allocations, dtype=np.int64)
    w = np.asarray(weights, dtype=float)
    if s.size and (s.min() < 0 or s.max() >= H):
        raise ValueError("allocation index out of range")
    conc = summary.prior_mass.astype(float).copy()
    if s.size:
        conc += np.bincount(s, weights=w / summary.c, minlength=H)
    return conc


def adjusted_weights(allocations, weights, summary: WeightSummary, rng) -> np.ndarray:
    """Draw the survey-adjusted mixture weights pi_tilde."""
    conc = adjusted_concentration(allocations, weights, summary)
    draw = rng.gamma(conc, 1.0)
    total = draw.sum()
    if not total > 0:
        # all-tiny gamma draws; fall back to the normalised concentration
        return conc / conc.sum()
    return draw / total


def weighted_resample(dataset, rng, m: int):
    """m i.i.d. subject ids drawn with replacement, P(i) = w_i / sum(w).

    Used only for descriptive weighted summaries of the raw sample.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    if m == 0:
        return []
    w = np.asarray(dataset.weights, dtype=float)
    idx = rng.choice(dataset.n, size=m, replace=True, p=w / w.sum())
    return [dataset.ids[i] for i in idx]
