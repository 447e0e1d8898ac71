#!/usr/bin/env python3
"""Importance sampling on an environment small enough to enumerate.

One AV follows one background vehicle for six steps. Every action sequence
can be listed, so we know the true crash probability exactly and can watch
the two samplers converge toward it:

* naturalistic sampling (NDE) draws the background vehicle's actions from
  their real-world frequencies, so crashes are rare and the estimate is noisy;
* adversarial sampling (NADE) inflates the dangerous actions and reweights
  each episode by its likelihood ratio, which keeps the estimate unbiased.

Run: python3 demos/toy_importance_sampling.py
"""

import numpy as np

from avsafety.estimator import Moments, converged
from avsafety.rng import stream
from avsafety.toy import ToyEnvironment, toy_trial

env = ToyEnvironment()
episodes = list(env.enumerate())
p_true = env.exact_crash_probability()
lhs, rhs = env.exact_is_identity()
var_nde, var_nade = env.exact_variances()

print(f"{len(episodes)} distinct episodes, exact crash probability {p_true:.6e}")
print(f"sum q*I*W = {lhs:.12e}\nsum P*I   = {rhs:.12e}  (unbiasedness holds exactly)")
print(f"per-episode variance: NDE {var_nde:.3e}, NADE {var_nade:.3e} ({var_nde / var_nade:.0f}x smaller)")

# Episodes needed for a 95% CI half-width of 30% of the estimate.
for name, var in (("NDE", var_nde), ("NADE", var_nade)):
    print(f"  predicted episodes to converge, {name}: {(1.96 / 0.3) ** 2 * var / p_true ** 2:,.0f}")

print("\nOne 20,000-episode estimate from each sampler:")
for importance in (False, True):
    est, se = toy_trial(env, 20_000, seed=7, importance=importance)
    name = "NADE" if importance else "NDE"
    print(f"  {name:4s}  {est:.4e} +/- {1.96 * se:.1e}   (truth {p_true:.4e})")

print("\nRunning each sampler until the relative half-width stays below 0.3:")
for importance, batch in ((True, 500), (False, 10_000)):
    rng = stream(11, "demo", int(importance))
    m, history = Moments(), []
    while not converged(history, 0.3):
        ind, w = env.sample(batch, rng, importance)
        m.extend(ind * w)
        history.append((m.n, m.estimate().rel_half_width))
    e = m.estimate()
    print(f"  {'NADE' if importance else 'NDE':4s}  {m.n:>8,d} episodes  estimate {e.p_hat:.4e}")
