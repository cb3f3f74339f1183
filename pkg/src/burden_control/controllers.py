"""Action-selection policies for the daily burden decision.

All controllers share the day-loop interface ``propose(n) -> Action``,
``observe(action, adhered)`` and ``snapshot() -> dict``. None of them can
see the simulator's latent state; adaptive controllers reconstruct a
believed state from their own parameter estimate.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .estimator import (EstimationFailure, FitResult, ParamEstimate, SubproblemFitter,
                        SubproblemGrid)
from .model import Action, PatientParams, state_bound
from .vi import (DEFAULT_MAX_ITERATIONS, DEFAULT_POINTS, DEFAULT_TOLERANCE, GridSpec,
                 PolicyTable, value_iteration)

log = logging.getLogger(__name__)


class Kind(str, enum.Enum):
    MLE_BETA = "MleBeta"
    THOMPSON = "Thompson"
    RANDOM = "Random"
    REACTIVE = "Reactive"
    ORACLE = "Oracle"


@dataclass(frozen=True)
class VISettings:
    n_points: int = DEFAULT_POINTS
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def grid(self, b: float) -> GridSpec:
        return GridSpec(state_bound(b=b), self.n_points, self.tolerance, self.max_iterations)


@dataclass(frozen=True)
class ControllerConfig:
    kind: Kind
    gamma_low: float = 0.5
    gamma_high: float = 1.0
    alpha: float = 0.95
    beta: float | None = None
    init_period: int = 10
    subproblem_grid: SubproblemGrid = field(default_factory=SubproblemGrid)
    vi: VISettings = field(default_factory=VISettings)
    refit_every: int = 1
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.MLE_BETA and not (self.beta is not None and self.beta > 0):
            raise ValueError("MleBeta needs beta > 0")
        if self.kind is Kind.THOMPSON and (self.init_period < 2 or self.init_period % 2):
            raise ValueError("Thompson init_period must be even and at least 2")
        if self.refit_every < 1:
            raise ValueError("refit_every must be at least 1")
        if not 0 < self.gamma_low <= self.gamma_high:
            raise ValueError("need 0 < gamma_low <= gamma_high")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind is Kind.MLE_BETA:
            return f"MLE({self.beta:.2f})"
        if self.kind is Kind.THOMPSON:
            return f"Thompson(T={self.init_period})"
        return self.kind.value


class PolicyCache:
    """VI policies keyed by the policy-relevant parameters.

    ``x0`` does not affect the full-information policy and is not part of the
    key. Misses are warm-started from the last value function solved for the
    same tuple, which only shortens the iteration.
    """

    def __init__(self, gamma_low: float, gamma_high: float, alpha: float,
                 vi: VISettings | None = None, size: int = 128):
        self.gamma_low, self.gamma_high, self.alpha = gamma_low, gamma_high, alpha
        self.vi = vi or VISettings()
        self.size = size
        self._policies: OrderedDict = OrderedDict()
        self._warm: dict = {}
        self.solves = 0

    def policy(self, est: ParamEstimate) -> PolicyTable:
        key = (est.c_low, est.lambda_low, est.lambda_high, est.b)
        hit = self._policies.get(key)
        if hit is not None:
            self._policies.move_to_end(key)
            return hit
        params = est.to_params(self.gamma_low, self.gamma_high, self.alpha)
        grid = self.vi.grid(est.b)
        value, pol = value_iteration(params, grid, self._warm.get(est.tuple))
        self.solves += 1
        self._warm[est.tuple] = value.values
        self._policies[key] = pol
        if len(self._policies) > self.size:
            self._policies.popitem(last=False)
        return pol


def alternating_action(n: int) -> Action:
    """Low on odd epochs, High on even ones."""
    return Action.LOW if n % 2 == 1 else Action.HIGH


def mle_exploration_prob(beta: float, n: int) -> float:
    return math.exp(-beta * n)


def random_select(rng: np.random.Generator) -> Action:
    return Action.HIGH if rng.random() < 0.5 else Action.LOW


def reactive_select(last_adherence: int | None) -> Action:
    if last_adherence is None:
        return Action.HIGH
    return Action.HIGH if last_adherence == 1 else Action.LOW


def oracle_policy(params_true: PatientParams, vi: VISettings | None = None) -> PolicyTable:
    vi = vi or VISettings()
    return value_iteration(params_true, vi.grid(params_true.b))[1]


class RandomController:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def propose(self, n: int) -> Action:
        return random_select(self.rng)

    def observe(self, action: Action, adhered: int) -> None:
        pass

    def snapshot(self) -> dict:
        return {}


class ReactiveController:
    def __init__(self):
        self.last: int | None = None

    def propose(self, n: int) -> Action:
        return reactive_select(self.last)

    def observe(self, action: Action, adhered: int) -> None:
        self.last = int(adhered)

    def snapshot(self) -> dict:
        return {}


class OracleController:
    """Knows the true parameters, so it can track the state exactly from the
    observed actions and decisions without touching the simulator."""

    def __init__(self, params: PatientParams, vi: VISettings | None = None):
        self.params = params
        self.policy = oracle_policy(params, vi)
        self.x = params.x0

    def propose(self, n: int) -> Action:
        return self.policy.action_at(self.x)

    def observe(self, action: Action, adhered: int) -> None:
        self.x = min(self.params.b * self.x + self.params.cost(action) * adhered,
                     self.params.x_bar)

    def snapshot(self) -> dict:
        return {"believed_state": self.x}


class _AdaptiveController:
    """Shared bookkeeping for the estimate-then-plan controllers."""

    def __init__(self, config: ControllerConfig, rng: np.random.Generator, prior=None):
        self.config = config
        self.rng = rng
        self.fitter = SubproblemFitter(config.subproblem_grid, prior)
        self.cache = PolicyCache(config.gamma_low, config.gamma_high, config.alpha, config.vi)
        self.fit: FitResult | None = None
        self.estimate: ParamEstimate | None = None
        self.believed_state: float | None = None
        self.current_policy: PolicyTable | None = None
        self.n = 0
        self._last_fit_n = None
        self._snap: dict = {}

    @property
    def log(self):
        return self.fitter.actions, self.fitter.decisions

    def _due(self, n: int) -> bool:
        return self._last_fit_n is None or n - self._last_fit_n >= self.config.refit_every

    def _refit(self, n: int) -> FitResult:
        self.fit = self.fitter.fit()
        self._last_fit_n = n
        return self.fit

    def observe(self, action: Action, adhered: int) -> None:
        self.fitter.append(action, adhered)
        # roll the believed state forward between refits
        if self.estimate is not None and self.believed_state is not None:
            cost = self.estimate.c_low if action is Action.LOW else 1.0
            self.believed_state = min(self.estimate.b * self.believed_state + cost * adhered,
                                      state_bound(b=self.estimate.b))

    def snapshot(self) -> dict:
        return dict(self._snap)

    def _fallback(self, n: int, exc: Exception) -> Action:
        log.warning("day %d: estimation failed (%s); choosing at random", n, exc)
        self._snap = {"fallback": True}
        return random_select(self.rng)


class MleBetaController(_AdaptiveController):
    """Certainty-equivalent control on the maximum-likelihood estimate with
    exponentially decaying exploration of the other action."""

    def propose(self, n: int) -> Action:
        self.n = n
        if n <= 2:
            self._snap = {}
            return alternating_action(n)
        try:
            if self._due(n):
                fit = self._refit(n)
                i = fit.best_index
                self.estimate = fit.estimate(i)
                self.believed_state = fit.next_state(i)
                self.current_policy = self.cache.policy(self.estimate)
        except EstimationFailure as exc:
            return self._fallback(n, exc)
        greedy = self.current_policy.action_at(self.believed_state)
        eps = self.rng.random()
        explore = eps <= mle_exploration_prob(self.config.beta, n)
        self._snap = {"believed_state": self.believed_state, "mle_index": self.estimate.index,
                      "weights": self.fit.weights, "explored": explore}
        return greedy.other if explore else greedy

    def choose(self, n: int, eps: float) -> Action:
        """Action for a given uniform draw, using the current policy and state."""
        greedy = self.current_policy.action_at(self.believed_state)
        return greedy.other if eps <= mle_exploration_prob(self.config.beta, n) else greedy


class ThompsonController(_AdaptiveController):
    """Samples one subproblem fit in proportion to its posterior weight and
    follows that fit's optimal policy."""

    sampled_index: int | None = None

    def sample_index(self, weights: np.ndarray) -> int:
        cum = np.cumsum(weights)
        u = self.rng.random() * cum[-1]
        return int(min(np.searchsorted(cum, u, side="right"), len(cum) - 1))

    def propose(self, n: int) -> Action:
        self.n = n
        if n <= self.config.init_period:
            self._snap = {}
            return alternating_action(n)
        try:
            fit = self._refit(n) if self._due(n) else self.fit
            weights = fit.weights
        except EstimationFailure as exc:
            return self._fallback(n, exc)
        i = self.sample_index(weights)
        self.sampled_index = i
        self.estimate = fit.estimate(i)
        self.believed_state = fit.next_state(i) if self._last_fit_n == n else self.believed_state
        self.current_policy = self.cache.policy(self.estimate)
        self._snap = {"believed_state": self.believed_state, "mle_index": fit.best_index,
                      "sampled_index": i, "weights": weights}
        return self.current_policy.action_at(self.believed_state)


def make_controller(config: ControllerConfig, rng: np.random.Generator,
                    true_params: PatientParams | None = None, prior=None):
    kind = config.kind
    if kind is Kind.MLE_BETA:
        return MleBetaController(config, rng, prior)
    if kind is Kind.THOMPSON:
        return ThompsonController(config, rng, prior)
    if kind is Kind.RANDOM:
        return RandomController(rng)
    if kind is Kind.REACTIVE:
        return ReactiveController()
    if kind is Kind.ORACLE:
        if true_params is None:
            raise ValueError("the oracle controller needs the true parameters")
        return OracleController(true_params, config.vi)
    raise ValueError(f"unknown controller kind {kind}")
