"""Synthetic patient trajectories under an arbitrary controller."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .model import Action, PatientParams, adherence_prob, reward, step_dynamics


class Controller(Protocol):
    """Day-loop interface every action source implements.

    ``propose`` receives the 1-based count of the decision epoch.
    Controllers only ever see actions and adherence decisions.
    """

    def propose(self, n: int) -> Action: ...

    def observe(self, action: Action, adhered: int) -> None: ...


class ControllerFailure(RuntimeError):
    def __init__(self, day: int, cause: BaseException):
        super().__init__(f"controller failed on day {day}: {cause!r}")
        self.day = day
        self.cause = cause


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    action: Action
    adhered: int
    # simulator-private; only evaluation code may read it
    latent_state_before: float
    reward: float


@dataclass
class Trajectory:
    records: list[TrajectoryRecord]
    seed: int | None
    params: PatientParams
    # optional per-day controller diagnostics, aligned with records
    diagnostics: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def actions(self) -> list[Action]:
        return [r.action for r in self.records]

    @property
    def decisions(self) -> list[int]:
        return [r.adhered for r in self.records]

    @property
    def latent_states(self) -> np.ndarray:
        return np.array([r.latent_state_before for r in self.records])

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])

    def check_chaining(self, atol: float = 1e-12) -> bool:
        recs = self.records
        if any(r.t != i for i, r in enumerate(recs)):
            return False
        for prev, nxt in zip(recs, recs[1:]):
            expect = step_dynamics(prev.latent_state_before, prev.action, prev.adhered, self.params)
            if abs(expect - nxt.latent_state_before) > atol:
                return False
        return True


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_step(x: float, a: Action, params: PatientParams,
                  rng: np.random.Generator) -> tuple[int, float, float]:
    p = adherence_prob(x, a, params)
    d = int(rng.random() < p)
    return d, step_dynamics(x, a, d, params), reward(a, d, params)


def run_trajectory(params: PatientParams, controller: Controller, horizon: int,
                   seed, *, diagnostics: bool = False) -> Trajectory:
    """Simulate ``horizon`` days, asking the controller before each one.

    With ``diagnostics=True`` the controller's ``snapshot()`` (if it has one)
    is stored after each proposal.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = make_rng(seed)
    x = params.x0
    records: list[TrajectoryRecord] = []
    diags: list[dict] = []
    snap = getattr(controller, "snapshot", None) if diagnostics else None
    for t in range(horizon):
        try:
            a = Action.parse(controller.propose(t + 1))
        except Exception as exc:
            raise ControllerFailure(t, exc) from exc
        if snap is not None:
            diags.append(snap())
        d, x_next, r = simulate_step(x, a, params, rng)
        records.append(TrajectoryRecord(t, a, d, x, r))
        try:
            controller.observe(a, d)
        except Exception as exc:
            raise ControllerFailure(t, exc) from exc
        x = x_next
    return Trajectory(records, seed if isinstance(seed, (int, np.integer)) else None,
                      params, diags)


def forced_trajectory(params: PatientParams, actions, decisions) -> list[float]:
    """Latent states visited under a fixed action/adherence sequence."""
    x = params.x0
    states = [x]
    for a, d in zip(actions, decisions):
        x = step_dynamics(x, Action.parse(a), int(d), params)
        states.append(x)
    return states
