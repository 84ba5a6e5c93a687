#!/usr/bin/env python3
"""Walk through the latent-variable links for each response kind.

Every observed value corresponds to a region of latent space: a half-line for
binary, a cutpoint interval for counts, and an argmax cone for nominal
utilities.  The sampler only ever draws latent coordinates inside these
regions, which is what this script illustrates.
"""

import numpy as np

from panelmix import CutpointRule, VariableSchema, latent_layout, latent_region, to_observed
from panelmix.links import truncated_normal

layout = latent_layout([
    VariableSchema(name="income", kind="continuous"),
    VariableSchema(name="employed", kind="binary"),
    VariableSchema(name="partners", kind="count", cutpoint_style="integer"),
    VariableSchema(name="identity", kind="nominal", categories=("het", "mhet", "other")),
])
print(f"latent dimension p = {layout.p} for {layout.n_vars} variables")

rng = np.random.default_rng(0)
ystar = rng.normal(size=layout.p)
y = to_observed(ystar, layout)
print("latent draw   ", np.round(ystar, 3))
print("observed codes", y, "(continuous value, 0/1, count, category index)")

region = latent_region(y, layout)
print("region bounds lo", np.round(region.lo, 3))
print("region bounds hi", np.round(region.hi, 3))
print("latent draw inside its own region:", region.contains(ystar))

# count cutpoints: integer style thresholds at 0, 1, 2, ...
rule = CutpointRule("integer")
for val in (-0.7, 0.4, 1.0, 2.3):
    print(f"count link: y* = {val:5.2f} -> count {rule.bin_of(val)}")

# log style compresses large counts
log_rule = CutpointRule("log")
print("log-style bins for y* in {0, 1, 2, 3}:", [int(log_rule.bin_of(v)) for v in range(4)])

# constrained redraw: a binary "yes" keeps its coordinate positive
draws = truncated_normal(rng, np.zeros(5), 1.0, 0.0, np.inf)
print("five truncated draws for a positive binary cell:", np.round(draws, 3))
