"""Patient engagement model: parameters, latent dynamics, adherence and reward."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

# Absolute slack when checking states against [0, x_bar].
BOUND_ATOL = 1e-12


class Action(enum.IntEnum):
    LOW = 0
    HIGH = 1

    @property
    def other(self) -> "Action":
        return Action.HIGH if self is Action.LOW else Action.LOW

    @property
    def symbol(self) -> str:
        return "l" if self is Action.LOW else "h"

    @classmethod
    def parse(cls, value) -> "Action":
        if isinstance(value, Action):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            if key in ("l", "low"):
                return cls.LOW
            if key in ("h", "high"):
                return cls.HIGH
            raise ValueError(f"unknown action {value!r}")
        return cls(int(value))


class ParameterError(ValueError):
    """Raised when a parameter vector violates a model invariant."""


@dataclass(frozen=True)
class PatientParams:
    """Full parameter vector of one synthetic patient.

    ``c_high`` is pinned to 1 for identifiability; ``x0`` must lie in
    ``[0, c_high / (1 - b)]``.
    """

    c_low: float
    lambda_low: float
    lambda_high: float
    b: float
    x0: float
    gamma_low: float
    gamma_high: float
    alpha: float
    c_high: float = 1.0

    def __post_init__(self):
        for name in ("c_low", "lambda_low", "lambda_high", "b", "x0",
                     "gamma_low", "gamma_high", "alpha", "c_high"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value}")
        if self.c_high != 1.0:
            raise ParameterError("c_high must equal 1")
        if not 0.0 <= self.c_low <= self.c_high:
            raise ParameterError(f"c_low must lie in [0, c_high], got {self.c_low}")
        if not 0.0 < self.lambda_low <= self.lambda_high:
            raise ParameterError(
                f"need 0 < lambda_low <= lambda_high, got {self.lambda_low}, {self.lambda_high}")
        if not 0.0 < self.gamma_low <= self.gamma_high:
            raise ParameterError(
                f"need 0 < gamma_low <= gamma_high, got {self.gamma_low}, {self.gamma_high}")
        if not 0.0 < self.b < 1.0:
            raise ParameterError(f"b must lie in (0, 1), got {self.b}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        x_bar = self.c_high / (1.0 - self.b)
        if not -BOUND_ATOL <= self.x0 <= x_bar + BOUND_ATOL:
            raise ParameterError(f"x0 must lie in [0, {x_bar}], got {self.x0}")

    @property
    def x_bar(self) -> float:
        return state_bound(self)

    def cost(self, a: Action) -> float:
        return self.c_low if a is Action.LOW else self.c_high

    def lam(self, a: Action) -> float:
        return self.lambda_low if a is Action.LOW else self.lambda_high

    def gamma(self, a: Action) -> float:
        return self.gamma_low if a is Action.LOW else self.gamma_high

    @property
    def tuple(self) -> tuple[float, float, float]:
        """The discretised ``(lambda_low, lambda_high, b)`` part of the vector."""
        return (self.lambda_low, self.lambda_high, self.b)

    def with_(self, **changes) -> "PatientParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "c_low": self.c_low, "c_high": self.c_high,
            "lambda_low": self.lambda_low, "lambda_high": self.lambda_high,
            "b": self.b, "x0": self.x0,
            "gamma_low": self.gamma_low, "gamma_high": self.gamma_high,
            "alpha": self.alpha,
        }


def state_bound(params: PatientParams | None = None, *, b: float | None = None,
                c_high: float = 1.0) -> float:
    """Upper edge of the reachable state interval, ``c_high / (1 - b)``."""
    if params is not None:
        b, c_high = params.b, params.c_high
    if b is None or not 0.0 < b < 1.0:
        raise ParameterError(f"state bound undefined for b={b}")
    return c_high / (1.0 - b)


def step_dynamics(x: float, a: Action, d: int, params: PatientParams) -> float:
    x_bar = params.x_bar
    if not -BOUND_ATOL <= x <= x_bar + BOUND_ATOL:
        raise ValueError(f"state {x} outside [0, {x_bar}]")
    nxt = params.b * x + params.cost(a) * d
    # rounding at the fixed point x_bar must not leak outside the interval
    return min(max(nxt, 0.0), x_bar)


def adherence_prob(x: float, a: Action, params: PatientParams) -> float:
    if x < 0.0:
        raise ValueError(f"state must be nonnegative, got {x}")
    return math.exp(-params.lam(a) * x)


def reward(a: Action, d: int, params: PatientParams) -> float:
    return params.gamma(a) * d
