"""Behavioral safety evaluation of black-box driving policies.

Two complementary tests are provided:

* a scenario-based licensing test (:mod:`avsafety.dlt`) with risk-tiered case
  generation, and
* a statistical crash-rate test (:mod:`avsafety.sim`, :mod:`avsafety.nade`,
  :mod:`avsafety.estimator`) running the policy in stochastic traffic, with an
  adversarial importance-sampling environment that keeps the estimate unbiased.
"""

__version__ = "0.1.0"
