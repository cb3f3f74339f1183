"""Experiment and sweep configuration files (YAML).

Patient parameters have no defaults: every field must be written out.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .controllers import ControllerConfig, Kind, VISettings
from .estimator import PAPER_BS, PAPER_LAMBDAS, SubproblemGrid
from .model import PatientParams

PATIENT_KEYS = ("c_low", "c_high", "lambda_low", "lambda_high", "b", "x0",
                "gamma_low", "gamma_high", "alpha")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    patient: PatientParams
    controllers: tuple[ControllerConfig, ...]
    horizons: tuple[int, ...]
    replications: int
    master_seed: int
    vi: VISettings = field(default_factory=VISettings)
    subproblem_grid: SubproblemGrid = field(default_factory=SubproblemGrid)
    output_dir: str = "results"
    name: str = "experiment"

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be a nonempty list of positive integers")
        if not self.controllers:
            raise ConfigError("no controllers configured")
        names = [c.name for c in self.controllers]
        if len(set(names)) != len(names):
            raise ConfigError(f"controller names must be unique, got {names}")

    @property
    def max_horizon(self) -> int:
        return max(self.horizons)

    def as_dict(self) -> dict:
        g = self.subproblem_grid
        return {
            "name": self.name,
            "patient": {k: getattr(self.patient, k) for k in PATIENT_KEYS},
            "controllers": [_controller_dict(c) for c in self.controllers],
            "horizons": list(self.horizons),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "vi": {"n_points": self.vi.n_points, "tolerance": self.vi.tolerance,
                   "max_iterations": self.vi.max_iterations},
            "subproblem_grid": {"lambda_set": list(g.lambda_set), "b_set": list(g.b_set),
                                "ordered_only": g.ordered_only},
            "output_dir": self.output_dir,
        }


@dataclass(frozen=True)
class SweepConfig:
    base: PatientParams
    parameter: str
    values: tuple[float, ...]
    vi: VISettings = field(default_factory=VISettings)
    output_dir: str = "results"


def _controller_dict(c: ControllerConfig) -> dict:
    out = {"kind": c.kind.value}
    if c.kind is Kind.MLE_BETA:
        out["beta"] = c.beta
    if c.kind is Kind.THOMPSON:
        out["init_period"] = c.init_period
    if c.refit_every != 1:
        out["refit_every"] = c.refit_every
    if c.label:
        out["label"] = c.label
    return out


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"missing required key '{key}' in {where}")
    return mapping[key]


def parse_patient(raw) -> PatientParams:
    if not isinstance(raw, dict):
        raise ConfigError("patient must be a mapping of explicit parameter values")
    unknown = set(raw) - set(PATIENT_KEYS)
    if unknown:
        raise ConfigError(f"unknown patient keys: {sorted(unknown)}")
    values = {k: float(_require(raw, k, "patient")) for k in PATIENT_KEYS}
    try:
        return PatientParams(**values)
    except ValueError as exc:
        raise ConfigError(f"invalid patient: {exc}") from exc


def parse_vi(raw) -> VISettings:
    raw = raw or {}
    allowed = {f.name for f in fields(VISettings)}
    if set(raw) - allowed:
        raise ConfigError(f"unknown vi keys: {sorted(set(raw) - allowed)}")
    try:
        vi = VISettings(**raw)
        vi.grid(0.5)  # validates the settings
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid vi settings: {exc}") from exc
    return vi


def parse_grid(raw) -> SubproblemGrid:
    raw = raw or {}
    try:
        return SubproblemGrid(
            lambda_set=tuple(float(v) for v in raw.get("lambda_set", PAPER_LAMBDAS)),
            b_set=tuple(float(v) for v in raw.get("b_set", PAPER_BS)),
            ordered_only=bool(raw.get("ordered_only", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid subproblem grid: {exc}") from exc


def parse_controller(raw, patient: PatientParams, vi: VISettings,
                     grid: SubproblemGrid) -> ControllerConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"controller entry must be a mapping, got {raw!r}")
    extra = set(raw) - {"kind", "beta", "init_period", "refit_every", "label"}
    if extra:
        raise ConfigError(f"unknown controller keys: {sorted(extra)}")
    try:
        return ControllerConfig(
            kind=Kind(_require(raw, "kind", "controller")),
            beta=raw.get("beta"),
            init_period=int(raw.get("init_period", 10)),
            refit_every=int(raw.get("refit_every", 1)),
            label=raw.get("label"),
            gamma_low=patient.gamma_low, gamma_high=patient.gamma_high, alpha=patient.alpha,
            vi=vi, subproblem_grid=grid,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid controller {raw!r}: {exc}") from exc


def experiment_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a mapping")
    patient = parse_patient(_require(raw, "patient", "experiment"))
    vi = parse_vi(raw.get("vi"))
    grid = parse_grid(raw.get("subproblem_grid"))
    ctrls = tuple(parse_controller(c, patient, vi, grid)
                  for c in _require(raw, "controllers", "experiment"))
    try:
        return ExperimentConfig(
            patient=patient, controllers=ctrls,
            horizons=tuple(int(h) for h in _require(raw, "horizons", "experiment")),
            replications=int(_require(raw, "replications", "experiment")),
            master_seed=int(_require(raw, "master_seed", "experiment")),
            vi=vi, subproblem_grid=grid,
            output_dir=str(raw.get("output_dir", "results")),
            name=str(raw.get("name", "experiment")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def sweep_from_dict(raw: dict) -> SweepConfig:
    if not isinstance(raw, dict):
        raise ConfigError("sweep config must be a mapping")
    values = _require(raw, "values", "sweep")
    if not values:
        raise ConfigError("sweep values must be nonempty")
    return SweepConfig(
        base=parse_patient(_require(raw, "base", "sweep")),
        parameter=str(_require(raw, "parameter", "sweep")),
        values=tuple(float(v) for v in values),
        vi=parse_vi(raw.get("vi")),
        output_dir=str(raw.get("output_dir", "results")),
    )


def _read(path) -> dict:
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def load_experiment(path) -> ExperimentConfig:
    return experiment_from_dict(_read(Path(path)))


def load_sweep(path) -> SweepConfig:
    return sweep_from_dict(_read(Path(path)))
