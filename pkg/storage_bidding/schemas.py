"""Pydantic records: technique specs, solve options, reports and study results."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import settings
from .exceptions import TechniqueError


class Technique(str, Enum):
    PD = "PD"
    PD_S = "PD-S"
    SD = "SD"
    SD_R = "SD-R"
    MC = "MC"
    CS = "CS"
    CS_R = "CS-R"
    CS_A = "CS-A"
    CS_AR = "CS-AR"
    PF_SD = "PF-SD"
    PF_CS = "PF-CS"
    BE_SD = "BE-SD"
    BE_PF = "BE-PF"
    UE_SD = "UE-SD"
    UE_PF = "UE-PF"
    SM1 = "SM1"
    SM2 = "SM2"


TECHNIQUE_NAMES = [t.value for t in Technique]

USES_EPS = {Technique.SD_R, Technique.CS_R, Technique.CS_AR, Technique.SM1, Technique.SM2}
USES_PI = {Technique.PF_SD, Technique.PF_CS, Technique.BE_PF, Technique.UE_PF}
USES_STEPS = {Technique.BE_SD, Technique.BE_PF, Technique.UE_SD, Technique.UE_PF}
NEEDS_STATIONARITY = {
    Technique.PD_S, Technique.CS, Technique.CS_R, Technique.CS_A, Technique.CS_AR,
    Technique.PF_CS, Technique.SM1, Technique.SM2,
}
DISCRETE = USES_STEPS


def default_eps(kind: Technique) -> float:
    return {
        Technique.SD_R: settings.DEFAULT_EPS_SD_R,
        Technique.CS_R: settings.DEFAULT_EPS_CS_R,
        Technique.CS_AR: settings.DEFAULT_EPS_CS_AR,
    }.get(kind, settings.DEFAULT_EPS_SM)


def default_pi(kind: Technique) -> float:
    return {
        Technique.PF_SD: settings.DEFAULT_PI_PF_SD,
        Technique.PF_CS: settings.DEFAULT_PI_PF_CS,
    }.get(kind, settings.DEFAULT_PI_DISCRETE)


def format_number(value: Optional[float]) -> str:
    """Compact float text: 8.6e-09 becomes 8.6e-9."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if value and (abs(value) < 1e-2 or abs(value) >= 1e6):
        mantissa, exponent = f"{value:.10e}".split("e")
        return f"{mantissa.rstrip('0').rstrip('.')}e{int(exponent)}"
    return f"{value:.10g}"


class TechniqueSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Technique
    eps: Optional[float] = None
    pi: Optional[float] = None
    steps: Optional[int] = None
    binaries: bool = False

    @model_validator(mode="after")
    def _check(self) -> "TechniqueSpec":
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.pi is not None and self.pi <= 0:
            raise ValueError("pi must be positive")
        if self.steps is not None and self.steps < 2:
            raise ValueError("D must be at least 2")
        return self

    @classmethod
    def parse(cls, text: str) -> "TechniqueSpec":
        """Accepts labels such as 'SM1 eps=1e-4', 'PF-CS pi=10', 'BE-SD D=8 binaries'."""
        tokens = text.replace(",", " ").split()
        if not tokens:
            raise TechniqueError("Empty technique string")
        name = tokens[0].upper()
        try:
            kind = Technique(name)
        except ValueError:
            raise TechniqueError(f"Unknown technique '{tokens[0]}'. Valid names: {', '.join(TECHNIQUE_NAMES)}")
        values: Dict[str, Any] = {"kind": kind}
        for tok in tokens[1:]:
            key, _, raw = tok.partition("=")
            key = key.lower()
            try:
                if key in ("eps", "epsilon"):
                    values["eps"] = float(raw)
                elif key == "pi":
                    values["pi"] = float(raw)
                elif key == "d":
                    values["steps"] = int(raw)
                elif key == "binaries":
                    values["binaries"] = raw.lower() not in ("0", "false", "off", "no")
                else:
                    raise TechniqueError(f"Unknown technique parameter '{tok}'")
            except ValueError:
                raise TechniqueError(f"Bad value in '{tok}'")
        return cls.build(**values)

    @classmethod
    def build(cls, kind, eps: float = None, pi: float = None, steps: int = None,
              binaries: bool = False) -> "TechniqueSpec":
        """Fill defaults for the parameters the technique uses and reject the others."""
        kind = Technique(kind)
        if eps is not None and kind not in USES_EPS:
            raise TechniqueError(f"{kind.value} takes no eps parameter")
        if pi is not None and kind not in USES_PI:
            raise TechniqueError(f"{kind.value} takes no pi parameter")
        if steps is not None and kind not in USES_STEPS:
            raise TechniqueError(f"{kind.value} takes no D parameter")
        if kind in USES_EPS and eps is None:
            eps = default_eps(kind)
        if kind in USES_PI and pi is None:
            pi = default_pi(kind)
        if kind in USES_STEPS and steps is None:
            steps = settings.DEFAULT_STEPS
        try:
            return cls(kind=kind, eps=eps, pi=pi, steps=steps, binaries=binaries)
        except ValueError as e:
            raise TechniqueError(str(e))

    def params_text(self) -> str:
        parts = []
        if self.eps is not None:
            parts.append(f"eps={format_number(self.eps)}")
        if self.pi is not None:
            parts.append(f"pi={format_number(self.pi)}")
        if self.steps is not None:
            parts.append(f"D={self.steps}")
        if self.binaries:
            parts.append("binaries")
        return " ".join(parts)

    def label(self) -> str:
        params = self.params_text()
        return f"{self.kind.value} {params}".strip()


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE_POINT = "infeasible-point"
    ITERATION_LIMIT = "iteration-limit"
    TIME_LIMIT = "time-limit"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"

    @property
    def accepted(self) -> bool:
        return self in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE)

    def describe(self) -> str:
        if self == SolveStatus.INFEASIBLE_POINT:
            return "Converged to infeas. point"
        return self.value


# worst first; used when every start of a multistart run fails
STATUS_ORDER = [
    SolveStatus.UNBOUNDED, SolveStatus.INFEASIBLE, SolveStatus.INFEASIBLE_POINT,
    SolveStatus.TIME_LIMIT, SolveStatus.ITERATION_LIMIT, SolveStatus.FEASIBLE, SolveStatus.OPTIMAL,
]


class SolveOptions(BaseModel):
    feasibility_tol: float = Field(default_factory=lambda: settings.FEASIBILITY_TOL, gt=0)
    optimality_tol: float = Field(default_factory=lambda: settings.OPTIMALITY_TOL, gt=0)
    max_iterations: int = Field(default_factory=lambda: settings.NLP_MAX_ITERS, ge=1)
    conic_max_iterations: int = Field(default_factory=lambda: settings.CONIC_MAX_ITERS, ge=1)
    multistart: int = Field(default_factory=lambda: settings.MULTISTART_COUNT, ge=1)
    radius: float = Field(default_factory=lambda: settings.MULTISTART_RADIUS, ge=0)
    time_limit: float = Field(default_factory=lambda: settings.TIME_LIMIT, gt=0)
    seed: int = Field(default_factory=lambda: settings.SEED)
    exhaustive: bool = False


@dataclass
class Solution:
    """Result of any solve; `point` covers every variable of the solved problem."""
    point: Dict[str, float]
    objective: float
    infeasibility: float
    status: SolveStatus
    iterations: int = 0
    wall_time: float = 0.0
    duals: Dict[str, float] = field(default_factory=dict)
    nodes: Optional[int] = None
    mip_gap: Optional[float] = None
    info: Dict[str, Any] = field(default_factory=dict)


class IterationRecord(BaseModel):
    outer_iteration: int
    computed_profit: Optional[float] = None
    actual_profit: Optional[float] = None
    diff_pct: Optional[float] = None
    duality_gap_pct: Optional[float] = None
    status: str = ""


class SolveReport(BaseModel):
    technique: str
    params: str = ""
    status: str = ""
    computed_profit: Optional[float] = None
    actual_profit: Optional[float] = None
    diff_pct: Optional[float] = None
    computed_expenses: Optional[float] = None
    actual_expenses: Optional[float] = None
    duality_gap_pct: Optional[float] = None
    wall_time: float = 0.0
    iterations: Optional[int] = None
    nodes: Optional[int] = None
    mip_gap: Optional[float] = None
    outer_iteration: int = 1
    storage_bus: Optional[int] = None
    violations: List[str] = Field(default_factory=list)
    message: str = ""
    history: List[IterationRecord] = Field(default_factory=list)

    @property
    def error(self) -> Optional[float]:
        if self.computed_profit is None or self.actual_profit is None:
            return None
        return abs(self.computed_profit - self.actual_profit)

    def table_row(self) -> Dict[str, str]:
        return {
            "technique": self.technique,
            "params": self.params,
            "status": self.status,
            "actual_profit": format_number(self.actual_profit),
            "computed_profit": format_number(self.computed_profit),
            "diff_pct": format_number(self.diff_pct),
            "duality_gap_pct": format_number(self.duality_gap_pct),
            "expenses_actual": format_number(self.actual_expenses),
            "expenses_computed": format_number(self.computed_expenses),
            "wall_time": format_number(self.wall_time),
            "iterations": format_number(self.iterations),
            "nodes": format_number(self.nodes),
            "mip_gap": format_number(self.mip_gap),
            "outer_iteration": str(self.outer_iteration),
            "storage_bus": format_number(self.storage_bus),
            "violations": ";".join(self.violations),
        }


class StudyRow(BaseModel):
    bus: int
    included: bool
    active_profit: Optional[float] = None
    full_profit: Optional[float] = None
    increase_pct: float = 0.0
    savings: float = 0.0
    status: str = ""


class StudyResult(BaseModel):
    technique: str
    rows: List[StudyRow] = Field(default_factory=list)
    ratio: Optional[float] = None

    def sorted_increases(self) -> List[float]:
        return sorted((r.increase_pct for r in self.rows), reverse=True)


class SweepResult(BaseModel):
    technique: str
    reports: List[SolveReport] = Field(default_factory=list)
    median_abs_diff_pct: Optional[float] = None
    mean_abs_diff_pct: Optional[float] = None
    max_abs_diff_pct: Optional[float] = None
