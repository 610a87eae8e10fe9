"""Deliberately broken contracts for fault-injection tests. Never registered by default."""

from __future__ import annotations

import time

from ..engine import Contract


def stamp(ctx, args):
    # reads the wall clock: every peer computes a different writeSet
    ctx.write(f"data/clock/{ctx.invoker}", time.time_ns())
    return None


def wall_clock_contract() -> Contract:
    return Contract("wallclock", "dynamic", {"stamp": stamp})
