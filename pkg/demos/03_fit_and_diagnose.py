#!/usr/bin/env python3
"""Fit the mixture model to a small case-1 dataset and check the chain.

A deliberately short chain on a few hundred subjects; for real use see the
schedule defaults in ModelConfig (5000 burn-in, 10000 kept, thin 10) and the
`panelmix fit` command, which persists draws and a scalar trace.
"""

import numpy as np

from panelmix import ModelConfig, generate, make_spec, run_chain
from panelmix.diagnostics import autocorrelations

spec = make_spec(1, 200, seed=3)
dataset = generate(spec, np.random.default_rng([3, 1, 1]))

config = ModelConfig(H=20, burnin=200, iterations=200, thin=10)
records = run_chain(config, dataset, np.random.default_rng([3, 1]))
print(f"kept {len(records)} thinned draws")

alphas = np.array([r.alpha for r in records])
occupied = [int((np.round(r.pi_tilde, 6) > 1e-4).sum()) for r in records]
print(f"alpha: mean {alphas.mean():.3f}")
print(f"components with visible adjusted mass: {occupied}")

acf = autocorrelations(alphas, max_lag=5)
print("alpha autocorrelations (thinned draws), lags 1-5:", np.round(acf, 2))

rec = records[-1]
print("adjusted weights sum:", rec.pi_tilde.sum())
print("largest three adjusted weights:", np.round(np.sort(rec.pi_tilde)[-3:], 3))
