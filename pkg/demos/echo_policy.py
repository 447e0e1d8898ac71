#!/usr/bin/env python3
"""Minimal external AV policy speaking the JSON Lines protocol.

Run it through the framework with ``--policy "cmd:python3 demos/echo_policy.py"``.
It holds a target speed, brakes for anything close ahead in its lane, and
echoes the observation time back so a test can check what it received.

``--misbehave`` switches on a failure mode used by the adapter tests:
``slow`` (misses the step budget), ``garbage`` (non-JSON reply),
``die`` (exits after the handshake), ``bad-accel`` (non-numeric command).
"""

import argparse
import json
import math
import sys
import time

TARGET_SPEED = 9.0


def command(obs: dict) -> dict:
    av = obs["av"]
    h = av["heading"]
    c, s = math.cos(h), math.sin(h)
    accel = 1.0 if av["speed"] < TARGET_SPEED else 0.0
    for o in obs["agents"]:
        dx, dy = o["x"] - av["x"], o["y"] - av["y"]
        ahead, lateral = c * dx + s * dy, -s * dx + c * dy
        if 0.0 < ahead < 8.0 + 2.0 * av["speed"] and abs(lateral) < 2.0:
            accel = -6.0
    return {"type": "command", "accel": accel, "lateral": "keep", "echo": obs["time"]}


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--misbehave", choices=("slow", "garbage", "die", "bad-accel"))
    args = ap.parse_args()
    out = sys.stdout
    for line in sys.stdin:
        msg = json.loads(line)
        kind = msg.get("type")
        if kind == "hello":
            reply = {"type": "hello", "name": "echo", "step_budget_ms": 50}
        elif kind == "reset":
            reply = {"type": "ready"}
        elif kind == "observation":
            if args.misbehave == "die":
                return 1
            if args.misbehave == "slow":
                time.sleep(1.0)
            if args.misbehave == "garbage":
                out.write("not json\n")
                out.flush()
                continue
            reply = command(msg["observation"])
            if args.misbehave == "bad-accel":
                reply["accel"] = "fast"
        elif kind == "bye":
            return 0
        else:
            reply = {"type": "error", "message": f"unknown message {kind!r}"}
        out.write(json.dumps(reply) + "\n")
        out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
