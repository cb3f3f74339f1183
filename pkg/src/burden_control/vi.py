"""Value iteration for the full-information burden selection problem.

The state interval ``[0, x_bar]`` is discretised on a uniform grid and
off-grid transition targets are linearly interpolated, which keeps the
gridded Bellman operator an exact sup-norm contraction with modulus alpha.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Action, PatientParams, state_bound

DEFAULT_POINTS = 3000
DEFAULT_TOLERANCE = 1e-3
DEFAULT_MAX_ITERATIONS = 10_000
ORACLE_HORIZON_CAP = 12


class NotConverged(RuntimeError):
    def __init__(self, residual: float, iterations: int, value=None, policy=None):
        super().__init__(f"value iteration stopped after {iterations} iterations "
                         f"with residual {residual:.3e}")
        self.residual = residual
        self.iterations = iterations
        self.value = value
        self.policy = policy


@dataclass(frozen=True)
class GridSpec:
    x_max: float
    n_points: int = DEFAULT_POINTS
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("grid needs at least two points")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.x_max > 0:
            raise ValueError("x_max must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")

    @classmethod
    def for_params(cls, params: PatientParams, **kw) -> "GridSpec":
        return cls(x_max=state_bound(params), **kw)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.x_max, self.n_points * factor, self.tolerance, self.max_iterations)

    @property
    def step(self) -> float:
        return self.x_max / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.n_points)


@dataclass
class ValueFunction:
    grid: GridSpec
    values: np.ndarray
    residuals: list[float] = field(default_factory=list)

    def __call__(self, x):
        return np.interp(x, self.grid.nodes, self.values)

    @property
    def iterations(self) -> int:
        return len(self.residuals)


@dataclass
class PolicyTable:
    grid: GridSpec
    actions: np.ndarray  # int8, 0 = LOW, 1 = HIGH
    q_low: np.ndarray
    q_high: np.ndarray

    def action_at(self, x: float) -> Action:
        """Greedy action at an arbitrary state; q-values are interpolated."""
        nodes = self.grid.nodes
        ql = np.interp(x, nodes, self.q_low)
        qh = np.interp(x, nodes, self.q_high)
        return Action.HIGH if qh > ql else Action.LOW

    def actions_at(self, xs) -> np.ndarray:
        nodes = self.grid.nodes
        xs = np.asarray(xs, dtype=float)
        return (np.interp(xs, nodes, self.q_high) > np.interp(xs, nodes, self.q_low)).astype(np.int8)

    def rows(self, value: ValueFunction | None = None):
        nodes = self.grid.nodes
        v = value.values if value is not None else np.maximum(self.q_low, self.q_high)
        for i in range(self.grid.n_points):
            yield {"x": nodes[i], "v": v[i], "q_low": self.q_low[i], "q_high": self.q_high[i],
                   "action": Action(int(self.actions[i])).name}

    def to_csv(self, path, value: ValueFunction | None = None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["x", "v", "q_low", "q_high", "action"])
            writer.writeheader()
            writer.writerows(self.rows(value))


class Structure(str, enum.Enum):
    ALWAYS_LOW = "AlwaysLow"
    ALWAYS_HIGH = "AlwaysHigh"
    SINGLE_THRESHOLD = "SingleThreshold"
    DOUBLE_THRESHOLD = "DoubleThreshold"
    OTHER = "Other"


@dataclass(frozen=True)
class PolicyStructure:
    classification: Structure
    thresholds: tuple[float, ...]
    first_action: Action


def _interp_weights(targets: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Left-neighbour index and right weight for linear interpolation."""
    n = grid.n_points
    pos = np.clip(targets / grid.step, 0.0, n - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    return lo, pos - lo


class _Operator:
    """Precomputed pieces of the gridded Bellman operator for one model.

    Each backup is a pair of gathers per transition target, so building the
    operator costs about as much as one backup.
    """

    def __init__(self, params: PatientParams, grid: GridSpec):
        if not math.isclose(grid.x_max, state_bound(params), rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"grid x_max {grid.x_max} does not match state bound "
                             f"{state_bound(params)}")
        x = grid.nodes
        self.alpha = params.alpha
        self.stay = _interp_weights(params.b * x, grid)
        self.arms = []
        for a in (Action.LOW, Action.HIGH):
            p = np.exp(-params.lam(a) * x)
            self.arms.append((p, p * params.gamma(a), _interp_weights(params.b * x + params.cost(a), grid)))

    @staticmethod
    def _interp(v: np.ndarray, lw) -> np.ndarray:
        lo, w = lw
        left = v[lo]
        return left + w * (v[lo + 1] - left)

    def q_values(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        v_stay = self._interp(v, self.stay)
        out = []
        for p, r, jump in self.arms:
            out.append(r + self.alpha * (v_stay + p * (self._interp(v, jump) - v_stay)))
        return out[0], out[1]


def _greedy(q_low: np.ndarray, q_high: np.ndarray) -> np.ndarray:
    # exact ties go to LOW
    return (q_high > q_low).astype(np.int8)


def bellman_backup(v: ValueFunction, params: PatientParams) -> ValueFunction:
    op = _Operator(params, v.grid)
    ql, qh = op.q_values(v.values)
    return ValueFunction(v.grid, np.maximum(ql, qh))


def q_functions(v: ValueFunction, params: PatientParams) -> tuple[np.ndarray, np.ndarray]:
    return _Operator(params, v.grid).q_values(v.values)


def value_iteration(params: PatientParams, grid: GridSpec | None = None,
                    v_init: np.ndarray | None = None) -> tuple[ValueFunction, PolicyTable]:
    """Iterate the Bellman backup from ``v_init`` (zero by default) to tolerance.

    Stops once the sup-norm change between successive iterates drops below
    ``grid.tolerance``. Raises :class:`NotConverged` if the iteration cap is hit.
    """
    if grid is None:
        grid = GridSpec.for_params(params)
    op = _Operator(params, grid)
    v = np.zeros(grid.n_points) if v_init is None else np.array(v_init, dtype=float)
    if v.shape != (grid.n_points,):
        raise ValueError("initial values do not match the grid")
    residuals: list[float] = []
    converged = False
    for _ in range(grid.max_iterations):
        ql, qh = op.q_values(v)
        v_new = np.maximum(ql, qh)
        residuals.append(float(np.max(np.abs(v_new - v))))
        v = v_new
        if residuals[-1] < grid.tolerance:
            converged = True
            break
    ql, qh = op.q_values(v)
    value = ValueFunction(grid, v, residuals)
    policy = PolicyTable(grid, _greedy(ql, qh), ql, qh)
    if not converged:
        raise NotConverged(residuals[-1], len(residuals), value, policy)
    return value, policy


def classify_policy(policy: PolicyTable) -> PolicyStructure:
    acts = np.asarray(policy.actions)
    if acts.size == 0:
        raise ValueError("empty policy")
    switch = np.flatnonzero(acts[1:] != acts[:-1])
    nodes = policy.grid.nodes
    thresholds = tuple(float(0.5 * (nodes[i] + nodes[i + 1])) for i in switch)
    first = Action(int(acts[0]))
    if len(switch) == 0:
        kind = Structure.ALWAYS_LOW if first is Action.LOW else Structure.ALWAYS_HIGH
    elif len(switch) == 1:
        kind = Structure.SINGLE_THRESHOLD
    elif len(switch) == 2:
        kind = Structure.DOUBLE_THRESHOLD
    else:
        kind = Structure.OTHER
    return PolicyStructure(kind, thresholds, first)


def finite_horizon_oracle(params: PatientParams, x_start: float, horizon: int,
                          cap: int = ORACLE_HORIZON_CAP) -> tuple[float, Action]:
    """Exact optimal discounted reward over ``horizon`` steps by full tree expansion.

    No grid and no memoisation: every action and adherence branch is expanded,
    so the cost is 4**horizon.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if horizon > cap:
        raise ValueError(f"horizon {horizon} exceeds oracle cap {cap}")
    b, alpha = params.b, params.alpha
    arms = [(a, params.lam(a), params.cost(a), params.gamma(a)) for a in (Action.LOW, Action.HIGH)]

    def value(x: float, k: int) -> tuple[float, Action]:
        best, best_a = -math.inf, Action.LOW
        for a, lam, c, g in arms:
            p = math.exp(-lam * x)
            if k == 1:
                q = p * g
            else:
                q = (p * (g + alpha * value(b * x + c, k - 1)[0])
                     + (1.0 - p) * alpha * value(b * x, k - 1)[0])
            if q > best:
                best, best_a = q, a
        return best, best_a

    return value(float(x_start), horizon)
