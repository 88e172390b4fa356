"""Bounded path functionals evaluated on sampled paths.

A path is given by increasing sample times and the values at those times, and
is read as a right-continuous step function: ``x(t)`` is the value at the last
sample time not exceeding ``t``. Functionals act on paths over ``[0, T]``; for
normalized trajectories ``T = 1``.

Each functional also knows how to update a running state generation by
generation, which lets whole trees be scored without materializing lineages
(see :func:`brwgibbs.gibbs.leaf_functional_values`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-9


def grid_generation(t, n: int):
    """``floor(t * n)``, robust to binary representation of ``t`` (e.g. 0.29 * 100)."""
    return np.floor(np.asarray(t, dtype=float) * n + _EPS).astype(np.int64)


def step_value(times: np.ndarray, values: np.ndarray, t: float) -> np.ndarray:
    """Value of the step path at time ``t``; ``values`` may carry leading batch axes."""
    idx = int(np.searchsorted(times, t + _EPS, side="right")) - 1
    idx = min(max(idx, 0), len(times) - 1)
    return values[..., idx]


class PathFunctional:
    """Base class. Subclasses implement :meth:`evaluate` and the streaming hooks."""

    kind = "abstract"

    @property
    def bound(self) -> float:
        return math.inf

    def evaluate(self, times, values) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, times, values):
        return self.evaluate(np.asarray(times, dtype=float), np.asarray(values, dtype=float))

    # streaming: state lives per node, updated once per generation
    def init_state(self, n: int, scale: float) -> np.ndarray:
        return np.zeros(1)

    def step_state(self, state: np.ndarray, gen: int, x: np.ndarray, n: int, scale: float) -> np.ndarray:
        return state

    def finish(self, state: np.ndarray, x: np.ndarray, n: int, scale: float) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        return self.kind


def _cap(v, cap):
    return v if cap is None else np.minimum(v, cap)


@dataclass(frozen=True)
class Constant(PathFunctional):
    c: float = 1.0
    kind = "const"

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("Constant functional must be nonnegative")

    @property
    def bound(self) -> float:
        return float(self.c)

    def evaluate(self, times, values):
        return np.full(np.shape(values)[:-1], float(self.c))

    def finish(self, state, x, n, scale):
        return np.full(x.shape, float(self.c))

    def describe(self):
        return f"const:{self.c:g}"


@dataclass(frozen=True)
class EvalAt(PathFunctional):
    """Path value at time ``t``, optionally capped from above."""

    t: float
    cap: float | None = None
    kind = "eval"

    def __post_init__(self):
        if not 0.0 <= self.t:
            raise ValueError("evaluation time must be nonnegative")

    @property
    def bound(self):
        return math.inf if self.cap is None else float(self.cap)

    def evaluate(self, times, values):
        return _cap(step_value(times, values, self.t), self.cap)

    def init_state(self, n, scale):
        return np.zeros(1)

    def step_state(self, state, gen, x, n, scale):
        if gen == int(grid_generation(self.t, n)):
            return x / scale
        return state

    def finish(self, state, x, n, scale):
        return _cap(np.broadcast_to(state, x.shape).astype(float), self.cap)

    def describe(self):
        return f"eval:{self.t:g}" + ("" if self.cap is None else f":cap{self.cap:g}")


@dataclass(frozen=True)
class Max(PathFunctional):
    """Running supremum of the path, optionally capped."""

    cap: float | None = None
    kind = "max"

    @property
    def bound(self):
        return math.inf if self.cap is None else float(self.cap)

    def evaluate(self, times, values):
        return _cap(np.max(values, axis=-1), self.cap)

    def step_state(self, state, gen, x, n, scale):
        return np.maximum(state, x / scale)

    def finish(self, state, x, n, scale):
        return _cap(np.broadcast_to(state, x.shape).astype(float), self.cap)

    def describe(self):
        return "max" + ("" if self.cap is None else f":cap{self.cap:g}")


@dataclass(frozen=True)
class TimeAverage(PathFunctional):
    """Time integral of the step path divided by its length."""

    kind = "avg"

    def evaluate(self, times, values):
        dt = np.diff(times)
        return (values[..., :-1] @ dt) / (times[-1] - times[0])

    def step_state(self, state, gen, x, n, scale):
        # generation gen contributes on [gen/n, (gen+1)/n) for gen < n
        if gen < n:
            return state + x / (scale * n)
        return state

    def finish(self, state, x, n, scale):
        return np.broadcast_to(state, x.shape).astype(float)


@dataclass(frozen=True)
class SoftThreshold(PathFunctional):
    """Piecewise-linear ramp ``clip((x(t) - level)/slope + 1/2, 0, 1)``."""

    t: float
    level: float
    slope: float
    kind = "soft"

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError("slope must be positive")

    @property
    def bound(self):
        return 1.0

    def _ramp(self, v):
        return np.clip((v - self.level) / self.slope + 0.5, 0.0, 1.0)

    def evaluate(self, times, values):
        return self._ramp(step_value(times, values, self.t))

    def step_state(self, state, gen, x, n, scale):
        if gen == int(grid_generation(self.t, n)):
            return x / scale
        return state

    def finish(self, state, x, n, scale):
        return self._ramp(np.broadcast_to(state, x.shape).astype(float))

    def describe(self):
        return f"soft:{self.t:g}:{self.level:g}:{self.slope:g}"


def parse_functional(text: str) -> PathFunctional:
    """Parse ``const:c``, ``eval:t[:cap]``, ``max[:cap]``, ``avg`` or ``soft:t:level:slope``."""
    parts = text.strip().lower().split(":")
    name, args = parts[0], [float(a) for a in parts[1:]]
    try:
        if name == "const":
            return Constant(args[0] if args else 1.0)
        if name == "eval":
            return EvalAt(args[0], args[1] if len(args) > 1 else None)
        if name == "max":
            return Max(args[0] if args else None)
        if name == "avg":
            return TimeAverage()
        if name == "soft":
            return SoftThreshold(*args[:3])
    except (IndexError, TypeError) as exc:
        raise ValueError(f"bad functional description {text!r}") from exc
    raise ValueError(f"unknown functional {text!r}")
