#!/usr/bin/env python3
"""Plugging an external driving policy in over the JSON Lines protocol.

``echo_policy.py`` is a stand-alone script that reads observations on stdin
and answers with commands on stdout. Any executable speaking the same
protocol can be tested with ``--policy "cmd:<command line>"``.

This demo runs one licensing scenario and a short crash-rate test with it,
then shows what happens when the policy misses its step budget.

Run: python3 demos/external_policy.py
"""

import shlex
import sys
from pathlib import Path

from avsafety.cli import main

here = Path(__file__).resolve().parent
policy = "cmd:" + shlex.join([sys.executable, str(here / "echo_policy.py")])

print("licensing test, car_following only:")
code = main(["dlt", "--scenario", "car_following", "--policy", policy, "--out", "demo-out/ext-dlt"])
print(f"exit code {code}  (0 pass, 1 fail)\n")

print("two short crash-rate episodes:")
code = main(["dit", "--mode", "nde", "--budget", "2", "--policy", policy, "--out", "demo-out/ext-dit"])
print(f"exit code {code}\n")

print("a policy that answers too slowly:")
code = main(["dit", "--mode", "nde", "--budget", "1", "--policy", policy + " --misbehave slow",
             "--out", "demo-out/ext-slow"])
print(f"exit code {code}  (3 = protocol or runtime error)")
