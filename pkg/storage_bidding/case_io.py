"""Case files, load profiles, bilevel instances and report files."""

import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import DATA_DIR, settings
from .exceptions import CaseFormatError, UnknownBusError, UnsupportedCostModelError
from .schemas import SolveReport, StudyResult, SweepResult

logger = logging.getLogger(__name__)

DAY_LENGTH = 24
DC = "DC"
JABR = "Jabr"
MODELS = (DC, JABR)


@dataclass(frozen=True)
class Bus:
    id: int
    bus_type: int
    vmin: float
    vmax: float
    gs: float = 0.0
    bs: float = 0.0
    base_kv: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    cost_lin: float = 0.0
    cost_quad: float = 0.0
    cost_const: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    rate: Optional[float] = None
    tap: float = 1.0
    shift: float = 0.0
    in_service: bool = True

    @property
    def g_series(self) -> float:
        return self.r / (self.r ** 2 + self.x ** 2)

    @property
    def b_series(self) -> float:
        return -self.x / (self.r ** 2 + self.x ** 2)

    @property
    def b_fr(self) -> float:
        return self.b / 2.0

    @property
    def b_to(self) -> float:
        return self.b / 2.0


@dataclass(frozen=True)
class Load:
    bus: int
    pd: float
    qd: float


@dataclass(frozen=True)
class Network:
    name: str
    base_power: float
    buses: Tuple[Bus, ...]
    generators: Tuple[Generator, ...]
    branches: Tuple[Branch, ...]
    loads: Tuple[Load, ...]

    def __post_init__(self):
        ids = {b.id for b in self.buses}
        for bus in self.buses:
            if bus.vmin > bus.vmax:
                raise CaseFormatError(f"bus {bus.id}: Vmin above Vmax")
        for gen in self.generators:
            if gen.pmin > gen.pmax:
                raise CaseFormatError(f"generator at bus {gen.bus}: Pmin above Pmax")
            if gen.bus not in ids:
                raise UnknownBusError(f"generator at undeclared bus {gen.bus}")
        for br in self.branches:
            if br.from_bus not in ids or br.to_bus not in ids:
                raise UnknownBusError(f"branch {br.from_bus}-{br.to_bus} has an undeclared endpoint")
            if br.rate is not None and br.rate <= 0:
                raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus}: thermal limit must be positive")

    @property
    def bus_ids(self) -> List[int]:
        return [b.id for b in self.buses]

    @property
    def bus_index(self) -> Dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def reference_bus(self) -> int:
        for b in self.buses:
            if b.bus_type == 3:
                return b.id
        return self.buses[0].id

    def active_generators(self) -> List[Tuple[int, Generator]]:
        return [(k, g) for k, g in enumerate(self.generators) if g.in_service]

    def active_branches(self) -> List[Tuple[int, Branch]]:
        return [(e, br) for e, br in enumerate(self.branches) if br.in_service]


@dataclass(frozen=True)
class LoadProfile:
    factors: Tuple[float, ...]

    def __post_init__(self):
        if len(self.factors) < 1:
            raise ValueError("Load profile needs at least one factor")
        if any(f <= 0 for f in self.factors):
            raise ValueError("Load profile factors must be positive")

    @classmethod
    def flat(cls, hours: int = DAY_LENGTH, factor: float = 1.0) -> "LoadProfile":
        return cls(tuple([factor] * hours))

    def __len__(self) -> int:
        return len(self.factors)


FREE = "free"
FIXED = "fixed"


@dataclass(frozen=True)
class StorageSpec:
    bus: int
    capacity: float = field(default_factory=lambda: settings.STORAGE_CAPACITY)
    rating: float = field(default_factory=lambda: settings.STORAGE_RATING)
    eta_ch: float = field(default_factory=lambda: settings.STORAGE_ETA_CH)
    eta_dis: float = field(default_factory=lambda: settings.STORAGE_ETA_DIS)
    initial_soe: float = field(default_factory=lambda: settings.STORAGE_INITIAL_SOE)
    terminal: str = FREE

    def __post_init__(self):
        if not (0 < self.eta_ch <= 1 and 0 < self.eta_dis <= 1):
            raise ValueError("Storage efficiencies must lie in (0, 1]")
        if self.rating <= 0:
            raise ValueError("Storage rating must be positive")
        if self.capacity <= 0:
            raise ValueError("Storage capacity must be positive")
        if not 0 <= self.initial_soe <= 1:
            raise ValueError("Initial state-of-energy fraction must lie in [0, 1]")
        if self.terminal not in (FREE, FIXED):
            raise ValueError(f"Unknown terminal policy '{self.terminal}'")


@dataclass(frozen=True, eq=False)
class BilevelInstance:
    """Time-extended market with one strategic storage unit.

    `screen` holds the branch indices whose thermal limits are imposed;
    None imposes every rated branch.
    """
    network: Network
    load_p: np.ndarray
    load_q: np.ndarray
    storage: StorageSpec
    model: str = JABR
    threshold: float = field(default_factory=lambda: settings.THERMAL_SCREEN_THRESHOLD)
    screen: Optional[FrozenSet[int]] = None
    reactive_bids: bool = True

    def __post_init__(self):
        if self.load_p.shape[0] < 1:
            raise ValueError("Horizon must contain at least one hour")
        if not 0 < self.threshold <= 1:
            raise ValueError("Thermal screen threshold must lie in (0, 1]")
        if self.model not in MODELS:
            raise ValueError(f"Unknown lower-level model '{self.model}'")

    @property
    def horizon(self) -> int:
        return self.load_p.shape[0]

    @property
    def has_reactive(self) -> bool:
        return self.model == JABR and self.reactive_bids

    def limited_branches(self) -> List[int]:
        rated = [e for e, br in self.network.active_branches() if br.rate is not None]
        if self.screen is None:
            return rated
        return [e for e in rated if e in self.screen]

    def with_screen(self, screen: Iterable[int]) -> "BilevelInstance":
        return replace(self, screen=frozenset(screen))

    def with_storage_bus(self, bus: int) -> "BilevelInstance":
        if bus not in self.network.bus_index:
            raise UnknownBusError(f"Storage bus {bus} is not in the network")
        return replace(self, storage=replace(self.storage, bus=bus))

    def with_reactive_bids(self, enabled: bool) -> "BilevelInstance":
        return replace(self, reactive_bids=enabled)


# case files

_TABLE_START = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([\[{])(.*)$")
_SCALAR = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^;\[{]+);?\s*$")
_FUNCTION = re.compile(r"^\s*function\s+mpc\s*=\s*(\w+)")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_tables(text: str):
    name = "case"
    scalars: Dict[str, Tuple[str, int]] = {}
    tables: Dict[str, List[Tuple[List[float], int]]] = {}
    current: Optional[str] = None
    skipping = False
    start_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if current is None and not skipping:
            m = _FUNCTION.match(line)
            if m:
                name = m.group(1)
                continue
            m = _TABLE_START.match(line)
            if m:
                key, bracket, rest = m.groups()
                start_line = lineno
                if bracket == "{":
                    skipping = "}" not in rest
                    continue
                current = key
                tables[key] = []
                line = rest.strip()
                if not line:
                    continue
            else:
                m = _SCALAR.match(line)
                if m:
                    scalars[m.group(1)] = (m.group(2).strip().strip("'\""), lineno)
                    continue
                raise CaseFormatError(f"unexpected content '{line[:40]}'", lineno)
        if skipping:
            if "}" in line:
                skipping = False
            continue
        closing = "]" in line
        body = line.split("]")[0]
        for chunk in body.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                row = [float(tok) for tok in chunk.replace(",", " ").split()]
            except ValueError:
                raise CaseFormatError(f"non-numeric entry in table '{current}'", lineno)
            tables[current].append((row, lineno))
        if closing:
            current = None
    if current is not None or skipping:
        raise CaseFormatError("table not terminated", start_line)
    return name, scalars, tables


def _need(tables, key: str, width: int):
    if key not in tables:
        raise CaseFormatError(f"missing table mpc.{key}")
    for row, lineno in tables[key]:
        if len(row) < width:
            raise CaseFormatError(f"mpc.{key} row has {len(row)} columns, expected >= {width}", lineno)
    return tables[key]


def parse_case(text: str) -> Network:
    """Parse the MATPOWER text subset (bus, gen, branch, gencost) into per-unit."""
    name, scalars, tables = _read_tables(text)
    if "baseMVA" not in scalars:
        raise CaseFormatError("missing mpc.baseMVA")
    raw_base, base_line = scalars["baseMVA"]
    try:
        base = float(raw_base)
    except ValueError:
        raise CaseFormatError("baseMVA is not a number", base_line)
    if base <= 0:
        raise CaseFormatError("baseMVA must be positive", base_line)

    buses, loads = [], []
    for row, lineno in _need(tables, "bus", 13):
        bus_id = int(row[0])
        buses.append(Bus(bus_id, int(row[1]), vmin=row[12], vmax=row[11],
                         gs=row[4] / base, bs=row[5] / base, base_kv=row[9]))
        if row[2] != 0 or row[3] != 0:
            loads.append(Load(bus_id, row[2] / base, row[3] / base))
    ids = {b.id for b in buses}

    gen_rows = _need(tables, "gen", 10)
    cost_rows = _need(tables, "gencost", 4)
    if len(cost_rows) < len(gen_rows):
        raise CaseFormatError(f"{len(gen_rows)} generators but {len(cost_rows)} gencost rows")
    generators = []
    for (row, lineno), (cost, cost_line) in zip(gen_rows, cost_rows):
        if int(row[0]) not in ids:
            raise CaseFormatError(f"generator at undeclared bus {int(row[0])}", lineno)
        quad, lin, const = _polynomial_cost(cost, cost_line)
        generators.append(Generator(
            bus=int(row[0]), pmin=row[9] / base, pmax=row[8] / base,
            qmin=row[4] / base, qmax=row[3] / base,
            cost_lin=lin * base, cost_quad=quad * base * base, cost_const=const,
            in_service=row[7] > 0,
        ))

    branches = []
    for row, lineno in _need(tables, "branch", 11):
        f, t = int(row[0]), int(row[1])
        for end in (f, t):
            if end not in ids:
                raise CaseFormatError(f"branch endpoint {end} is not a declared bus", lineno)
        if row[10] > 0 and row[3] == 0:
            # both the DC susceptance and the series admittance divide by the reactance
            raise CaseFormatError(f"branch {f}-{t} is in service with zero series reactance", lineno)
        branches.append(Branch(
            from_bus=f, to_bus=t, r=row[2], x=row[3], b=row[4],
            rate=row[5] / base if row[5] > 0 else None,
            tap=row[8] if row[8] != 0 else 1.0,
            shift=math.radians(row[9]),
            in_service=row[10] > 0,
        ))
    net = Network(name, base, tuple(buses), tuple(generators), tuple(branches), tuple(loads))
    logger.debug(f"Parsed case '{name}': {len(buses)} buses, {len(generators)} gens, {len(branches)} branches")
    return net


def _polynomial_cost(cost: Sequence[float], lineno: int) -> Tuple[float, float, float]:
    model, ncost = int(cost[0]), int(cost[3])
    if model != 2:
        raise UnsupportedCostModelError("only polynomial (model 2) costs are supported", lineno)
    if ncost > 3:
        raise UnsupportedCostModelError(f"polynomial cost of degree {ncost - 1} is not supported", lineno)
    coefs = list(cost[4:4 + ncost])
    if len(coefs) < ncost:
        raise CaseFormatError("gencost row is shorter than its NCOST", lineno)
    coefs = [0.0] * (3 - ncost) + coefs
    return coefs[0], coefs[1], coefs[2]


def load_case(path) -> Network:
    path = Path(path)
    if not path.exists():
        bundled = DATA_DIR / path.name
        if bundled.exists():
            path = bundled
    return parse_case(path.read_text(encoding="utf-8"))


def serialize_case(net: Network) -> str:
    """Write a network back to MATPOWER text (inverse of parse_case)."""
    base = net.base_power
    load_p = {l.bus: l.pd for l in net.loads}
    load_q = {l.bus: l.qd for l in net.loads}
    out = [f"function mpc = {net.name}", "mpc.version = '2';", f"mpc.baseMVA = {base!r};", "", "mpc.bus = ["]
    for b in net.buses:
        out.append("\t" + "\t".join(map(repr, [
            b.id, b.bus_type, load_p.get(b.id, 0.0) * base, load_q.get(b.id, 0.0) * base,
            b.gs * base, b.bs * base, 1, 1.0, 0.0, b.base_kv, 1, b.vmax, b.vmin,
        ])) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in net.generators:
        out.append("\t" + "\t".join(map(repr, [
            g.bus, 0.0, 0.0, g.qmax * base, g.qmin * base, 1.0, base,
            1 if g.in_service else 0, g.pmax * base, g.pmin * base,
        ])) + ";")
    out += ["];", "", "mpc.branch = ["]
    for br in net.branches:
        out.append("\t" + "\t".join(map(repr, [
            br.from_bus, br.to_bus, br.r, br.x, br.b,
            br.rate * base if br.rate is not None else 0.0, 0.0, 0.0,
            br.tap, math.degrees(br.shift), 1 if br.in_service else 0, -360.0, 360.0,
        ])) + ";")
    out += ["];", "", "mpc.gencost = ["]
    for g in net.generators:
        out.append("\t" + "\t".join(map(repr, [
            2, 0.0, 0.0, 3, g.cost_quad / (base * base), g.cost_lin / base, g.cost_const,
        ])) + ";")
    out += ["];", ""]
    return "\n".join(out)


def load_profile(text: str) -> LoadProfile:
    """Profile file: one positive factor per line, '#' comments allowed."""
    factors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        try:
            factors.append(float(line))
        except ValueError:
            raise CaseFormatError(f"profile factor '{line}' is not a number", lineno)
    if len(factors) != DAY_LENGTH:
        raise CaseFormatError(f"profile has {len(factors)} factors, expected {DAY_LENGTH}")
    try:
        return LoadProfile(tuple(factors))
    except ValueError as e:
        raise CaseFormatError(str(e))


def read_profile(path) -> LoadProfile:
    path = Path(path)
    if not path.exists() and (DATA_DIR / path.name).exists():
        path = DATA_DIR / path.name
    return load_profile(path.read_text(encoding="utf-8"))


def build_instance(net: Network, profile: LoadProfile, storage: StorageSpec, model: str = JABR,
                   threshold: float = None) -> BilevelInstance:
    if storage.bus not in net.bus_index:
        raise UnknownBusError(f"Storage bus {storage.bus} is not in the network")
    factors = np.asarray(profile.factors, dtype=float)[:, None]
    base_p = np.array([l.pd for l in net.loads], dtype=float)[None, :]
    base_q = np.array([l.qd for l in net.loads], dtype=float)[None, :]
    return BilevelInstance(
        network=net,
        load_p=factors * base_p,
        load_q=factors * base_q,
        storage=storage,
        model=model,
        threshold=settings.THERMAL_SCREEN_THRESHOLD if threshold is None else threshold,
    )


# reports

def _report_paths(path) -> Tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".csv"):
        path = path.with_suffix("")
    return path.with_suffix(".json"), path.with_suffix(".csv")


def write_report(report: SolveReport, path) -> Tuple[Path, Path]:
    """Write one JSON record and one CSV row; existing files are overwritten."""
    json_path, csv_path = _report_paths(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    pd.DataFrame([report.table_row()]).to_csv(csv_path, index=False)
    logger.info(f"Report written to {json_path} and {csv_path}")
    return json_path, csv_path


def write_table(reports: Sequence[SolveReport], path) -> Tuple[Path, Path]:
    json_path, csv_path = _report_paths(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    payload = "[\n" + ",\n".join(r.model_dump_json(indent=2) for r in reports) + "\n]\n"
    json_path.write_text(payload, encoding="utf-8")
    pd.DataFrame([r.table_row() for r in reports]).to_csv(csv_path, index=False)
    logger.info(f"{len(reports)} report rows written to {csv_path}")
    return json_path, csv_path


def write_study(result: StudyResult, path) -> Tuple[Path, Path]:
    """Study rows sorted by profit increase, largest first."""
    json_path, csv_path = _report_paths(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(result.model_dump_json(indent=2), encoding="utf-8")
    frame = pd.DataFrame([r.model_dump() for r in result.rows])
    if not frame.empty:
        frame = frame.sort_values("increase_pct", ascending=False, kind="stable")
    frame.to_csv(csv_path, index=False)
    logger.info(f"Study of {len(result.rows)} buses written to {csv_path}")
    return json_path, csv_path


def write_sweep(result: SweepResult, path) -> Tuple[Path, Path]:
    json_path, csv_path = _report_paths(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(result.model_dump_json(indent=2), encoding="utf-8")
    pd.DataFrame([r.table_row() for r in result.reports]).to_csv(csv_path, index=False)
    logger.info(f"Sweep of {len(result.reports)} buses written to {csv_path}")
    return json_path, csv_path
