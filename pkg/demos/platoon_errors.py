#!/usr/bin/env python3
"""Crashes in a ring platoon as human-error rates shrink.

Ten IDM drivers circle a 150 m ring. Without errors the equilibrium is
stable and nobody crashes. With errors, a driver occasionally stops
attending to its leader for two seconds. The crash rate should fall as the
error probability falls, which is the behavior the error model is
calibrated against.

Run: python3 demos/platoon_errors.py
"""

from avsafety.behavior import ErrorModel
from avsafety.platoon import platoon_rollout

clean = platoon_rollout(steps=20_000, replicas=4)
print(f"no errors: {clean.crashes} crashes in {clean.steps:,d} steps, min gap {clean.min_gap:.2f} m")

for p in (0.01, 0.003, 0.001):
    r = platoon_rollout(steps=50_000, errors=ErrorModel(lead_vehicle=p), seed=3, replicas=8)
    print(f"error prob {p:<6}: {r.neglect_events:6d} lapses, {r.crashes:5d} crashes, "
          f"rate {r.crash_rate:.2e} per step")
