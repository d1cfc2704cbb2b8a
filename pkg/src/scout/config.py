"""Declarative experiment configuration (JSON or YAML), validated up front."""
from __future__ import annotations

import hashlib
import json
import typing
from dataclasses import fields as dc_fields
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, create_model, model_validator

from .calibration import CalibratorKind, OACalConfig, OverlapGates
from .core import CostModel
from .evaluation.protocol import (
    OA_CAL,
    CalibrationSettings,
    CorrectionSettings,
    ScorerSettings,
    SplitSpec,
)
from .scoring import ScorerConfig, ScorerVariant
from .simulator.model import ScenarioKind, SimConfig, StressScenario


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _simulator_section() -> type[BaseModel]:
    hints = typing.get_type_hints(SimConfig)
    defaults = SimConfig()
    spec = {}
    for f in dc_fields(SimConfig):
        tp = hints[f.name]
        if f.name == "fault_mix":
            tp = dict[str, float]
        spec[f.name] = (tp, getattr(defaults, f.name))
    return create_model("SimulatorSection", __base__=_Strict, **spec)


SimulatorSection = _simulator_section()


class ScenarioSection(_Strict):
    kind: ScenarioKind = ScenarioKind.IID
    rho: float = 0.0
    gamma: float = 0.0
    p: float = 0.0
    delta: float = 0.0
    level: Literal["none", "mild", "strong"] = "none"


class SplitSection(_Strict):
    kind: Literal["temporal", "logo", "domain_transfer"] = "temporal"
    train: float = 0.6
    cal: float = 0.2
    test: float = 0.2
    group_field: str = "test_id"
    source_filter: Optional[dict[str, str | list[str]]] = None
    target_filter: Optional[dict[str, str | list[str]]] = None


class ScorerSection(_Strict):
    variant: ScorerVariant = ScorerVariant.STATE
    l2: Optional[float] = None
    class_weight: Optional[Literal["balanced"]] = "balanced"
    tol: float = 1e-6
    max_iter: int = Field(500, ge=1)


class GatesSection(_Strict):
    ess_min: float = Field(0.2, ge=0, le=1)
    auc_max: float = Field(0.95, ge=0.5, le=1)
    n_min: int = Field(200, ge=0)
    clip_bounds: tuple[float, float] = (0.1, 10.0)


class CalibrationSection(_Strict):
    methods: list[str] = ["Sigmoid", "Isotonic", "Beta", OA_CAL]
    candidates: list[CalibratorKind] = [
        CalibratorKind.SIGMOID, CalibratorKind.BETA, CalibratorKind.ISOTONIC,
        CalibratorKind.CALIB_TREE, CalibratorKind.BBQ_LITE,
    ]
    include_venn_abers: bool = False
    kappa: float = Field(1.0, ge=0)
    gates: GatesSection = GatesSection()
    n_repeats: int = Field(5, ge=1)
    force_weighting: bool = False
    allow_high_variance: bool = False

    @model_validator(mode="after")
    def _known_methods(self):
        for m in self.methods:
            if m != OA_CAL:
                try:
                    CalibratorKind(m)
                except ValueError:
                    raise ValueError(f"unknown calibration method {m!r}") from None
        return self


class CorrectionSection(_Strict):
    R_observed: Optional[int] = Field(None, ge=1)
    R_oracle: int = Field(8, ge=1)
    modes: list[Literal["naive", "posterior_soft"]] = ["naive"]


class CostSection(_Strict):
    c_fp: float = Field(1.0, ge=0)
    c_fn: float = Field(8.0, ge=0)
    c_auto: float = Field(0.15, ge=0)


class SweepSection(_Strict):
    c_fn: list[float] = [2, 4, 6, 8, 10, 12, 14, 16]
    c_auto: list[float] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3]


class ExperimentConfig(_Strict):
    simulator: SimulatorSection = SimulatorSection()
    scenario: ScenarioSection = ScenarioSection()
    dataset: Optional[str] = None
    window_mode: Literal["pre_only", "leakage_ablation"] = "pre_only"
    split: SplitSection = SplitSection()
    scorer: ScorerSection = ScorerSection()
    calibration: CalibrationSection = CalibrationSection()
    correction: CorrectionSection = CorrectionSection()
    cost: CostSection = CostSection()
    sweep: SweepSection = SweepSection()
    seeds: list[int] = [1]
    output_dir: str = "scout-out"

    @model_validator(mode="after")
    def _cross_checks(self):
        # construct the runtime objects so their own validation runs now
        self.sim_config()
        self.stress_scenario()
        self.split_spec()
        self.correction_settings()
        self.cost_model()
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.window_mode == "leakage_ablation" and not self.simulator.include_post_failure:
            raise ValueError("leakage_ablation needs simulator.include_post_failure = true")
        return self

    def sim_config(self, seed: int | None = None) -> SimConfig:
        d = self.simulator.model_dump()
        if seed is not None:
            d["seed"] = seed
        return SimConfig(**d)

    def stress_scenario(self) -> StressScenario:
        return StressScenario(**self.scenario.model_dump())

    def split_spec(self) -> SplitSpec:
        return SplitSpec(**self.split.model_dump())

    def scorer_settings(self) -> ScorerSettings:
        s = self.scorer
        return ScorerSettings(s.variant, ScorerConfig(l2=s.l2, class_weight=s.class_weight, tol=s.tol,
                                                      max_iter=s.max_iter))

    def calibration_settings(self, seed: int = 0) -> CalibrationSettings:
        c = self.calibration
        candidates = tuple(c.candidates)
        if c.include_venn_abers and CalibratorKind.VENN_ABERS not in candidates:
            candidates += (CalibratorKind.VENN_ABERS,)
        g = c.gates
        oa = OACalConfig(candidates=candidates, kappa=c.kappa,
                         gates=OverlapGates(g.ess_min, g.auc_max, g.n_min, tuple(g.clip_bounds)),
                         n_repeats=c.n_repeats, seed=seed, force_weighting=c.force_weighting,
                         allow_high_variance=c.allow_high_variance)
        return CalibrationSettings(tuple(c.methods), oa)

    def correction_settings(self) -> CorrectionSettings:
        c = self.correction
        return CorrectionSettings(c.R_observed, c.R_oracle, tuple(c.modes))

    def cost_model(self) -> CostModel:
        return CostModel(**self.cost.model_dump())

    def canonical_json(self) -> str:
        # where artifacts land does not change what they contain
        return json.dumps(self.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True,
                          separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides such as ``{"cost.c_fn": 4.0}`` applied and re-validated."""
        d = self.model_dump(mode="json")
        for path, value in changes.items():
            node = d
            *parents, leaf = path.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return parse_config(d)


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: dict | None) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse ({exc})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data)
