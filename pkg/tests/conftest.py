"""Shared test helpers: seeded random program generation and an independent
schedule-expansion oracle for the command scheduler."""

import random

from pneurig.control import At, Command, End, Loop, Program, SetRegulator, SetValve


def random_command(rng: random.Random, n_channels: int = 5) -> Command:
    ch = rng.randint(1, n_channels)
    if rng.random() < 0.5:
        return SetRegulator(ch, round(rng.uniform(0.0, 500.0), 2))
    return SetValve(ch, rng.random() < 0.5)


def random_program(rng: random.Random, n_channels: int = 5, max_items: int = 6) -> Program:
    """A structurally valid, normalized program (no explicit END)."""
    items = []
    t = 0.0
    for _ in range(rng.randint(0, max_items)):
        if rng.random() < 0.35:
            period = round(rng.uniform(0.5, 5.0), 3)
            body = []
            for _ in range(rng.randint(0, 4)):
                bt = min(round(rng.uniform(0.0, period), 3), period - 0.001)
                body.append(At(bt, random_command(rng, n_channels)))
            items.append(Loop(rng.randint(1, 5), period, tuple(body)))
        else:
            t = round(t + rng.uniform(0.0, 3.0), 3)
            items.append(At(t, random_command(rng, n_channels)))
    return Program(tuple(sorted(items, key=_start_time)))


def _start_time(item) -> float:
    if isinstance(item, At):
        return item.time
    return min((at.time for at in item.body), default=0.0)


def expand_schedule(program: Program) -> list[tuple[float, Command]]:
    """Brute-force expansion of every due (time, command), in the order the
    scheduler must emit them: non-decreasing due time, ties by item position
    then source order."""
    events = []
    for idx, item in enumerate(program.items):
        if isinstance(item, At):
            events.append((item.time, idx, item.command))
        else:
            for i in range(item.count):
                for at in item.body:
                    events.append((i * item.period + at.time, idx, at.command))
    events.sort(key=lambda e: (e[0], e[1]))
    return [(due, cmd) for due, _, cmd in events]
