"""Network and scenario data model.

A study case bundles the radial low-voltage network, hourly load profiles,
distributed generator fleet, battery, grid tariff and reliability data into a
single immutable ``MicrogridCase``.  Cases are stored on disk as one YAML
document (see ``docs/case-format.md``) so a scenario stays atomic.

All powers are kW, energies kWh, prices euro-cents per kWh, impedances ohm,
voltages per-unit unless a field name says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import yaml

CASE_FORMAT_VERSION = 1

BUS_KINDS = ("slack", "load", "generation")
LOAD_CATEGORIES = ("domestic", "industrial", "commercial")

TRANSFORMER_ELEMENT = "transformer"


class CaseError(ValueError):
    """A case document violates the schema or the network rules."""


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str = "load"
    base_voltage_kv: Optional[float] = None


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    resistance_ohm: float
    reactance_ohm: float


@dataclass(frozen=True)
class LoadPoint:
    """Aggregated consumer group at one bus with an hourly demand profile."""

    bus: str
    category: str
    profile_kw: Tuple[float, ...]
    power_factor: float = 0.9


@dataclass(frozen=True)
class DgUnit:
    """Distributed generator with an affine running cost b*P + c."""

    name: str
    bus: str
    p_min_kw: float
    p_max_kw: float
    cost_slope_ct_per_kwh: float
    cost_fixed_ct_per_h: float = 0.0
    renewable: bool = False

    @property
    def committable(self) -> bool:
        return self.p_min_kw > 0.0


@dataclass(frozen=True)
class Battery:
    """Storage unit following the SOC recursion with charge-positive power."""

    bus: str
    soc_min_kwh: float
    soc_max_kwh: float
    soc_initial_kwh: float
    p_max_kw: float
    eta_charge: float = 0.9
    eta_discharge: float = 0.9
    self_discharge_per_h: float = 0.002
    usage_cost_ct_per_kwh: float = 0.38


@dataclass(frozen=True)
class Contingency:
    """Random outage of one network element.

    ``element`` is a branch id, or ``"transformer"`` for loss of the upstream
    grid connection (islands every bus).
    """

    id: str
    element: str
    rate_per_hour: float
    repair_hours: float


@dataclass(frozen=True)
class OutageCostTable:
    """Outage cost per load category, optionally stepped by outage duration.

    Each category maps to a sorted tuple of (up_to_hours, cost_ct_per_kwh)
    steps; the cost of an outage is the first step whose duration bound covers
    it, or the last step's cost beyond the table.
    """

    steps: Dict[str, Tuple[Tuple[float, float], ...]]

    @classmethod
    def from_mapping(cls, raw: Dict[str, object]) -> "OutageCostTable":
        steps: Dict[str, Tuple[Tuple[float, float], ...]] = {}
        for category, value in raw.items():
            if isinstance(value, (int, float)):
                steps[category] = ((math.inf, float(value)),)
            else:
                rows = tuple((float(d), float(c)) for d, c in value)  # type: ignore[union-attr]
                if not rows or any(rows[i][0] >= rows[i + 1][0] for i in range(len(rows) - 1)):
                    raise CaseError(f"outage cost steps for {category!r} must increase in duration")
                steps[category] = rows
        return cls(steps)

    def cost(self, category: str, duration_hours: float) -> float:
        try:
            rows = self.steps[category]
        except KeyError:
            raise CaseError(f"no outage cost for load category {category!r}") from None
        for up_to, cost in rows:
            if duration_hours <= up_to:
                return cost
        return rows[-1][1]

    def to_mapping(self) -> Dict[str, object]:
        out: Dict[str, object] = {}
        for category, rows in self.steps.items():
            if len(rows) == 1 and math.isinf(rows[0][0]):
                out[category] = rows[0][1]
            else:
                out[category] = [[d, c] for d, c in rows]
        return out


@dataclass(frozen=True)
class DrProgram:
    """Demand response program: same-day energy-neutral load shifting."""

    shiftable_fraction: float = 0.15
    participating: Tuple[str, ...] = LOAD_CATEGORIES
    incentive_ct_per_kwh: float = 0.0


@dataclass(frozen=True)
class MicrogridCase:
    """Complete input for one day-ahead dispatch study."""

    name: str
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    load_points: Tuple[LoadPoint, ...]
    units: Tuple[DgUnit, ...]
    battery: Optional[Battery]
    grid_limit_kw: float
    prices_ct_per_kwh: Tuple[float, ...]
    availability_kw: Dict[str, Tuple[float, ...]]
    contingencies: Tuple[Contingency, ...]
    outage_costs: OutageCostTable
    voltage_limits: Tuple[float, float] = (0.95, 1.05)
    export_limit_kw: Optional[float] = None
    horizon: int = 24
    period_hours: float = 1.0
    base_voltage_kv: float = 0.4
    base_power_kva: float = 100.0
    weights: Optional[Tuple[float, float, float, float]] = None
    judgment_matrix: Optional[Tuple[Tuple[float, ...], ...]] = None
    dr: Optional[DrProgram] = None

    @property
    def z_base_ohm(self) -> float:
        return 1000.0 * self.base_voltage_kv ** 2 / self.base_power_kva

    @property
    def slack_bus(self) -> str:
        for bus in self.buses:
            if bus.kind == "slack":
                return bus.id
        raise CaseError("case has no slack bus")

    @property
    def effective_export_limit_kw(self) -> float:
        """Export bound on the grid tie; defaults to the import limit."""
        return self.grid_limit_kw if self.export_limit_kw is None else self.export_limit_kw

    def bus_ids(self) -> Tuple[str, ...]:
        return tuple(b.id for b in self.buses)

    def unit(self, name: str) -> DgUnit:
        for u in self.units:
            if u.name == name:
                return u
        raise KeyError(name)

    def total_load_kw(self, hour: int) -> float:
        return sum(lp.profile_kw[hour] for lp in self.load_points)

    def peak_load_kw(self) -> float:
        return max(self.total_load_kw(t) for t in range(self.horizon))

    def unit_cap_kw(self, unit: DgUnit, hour: int) -> float:
        """Upper dispatch bound for a unit at one hour."""
        if unit.renewable:
            return self.availability_kw[unit.name][hour]
        return unit.p_max_kw


def validate_radial(buses: Sequence[Bus], branches: Sequence[Branch]) -> List[Branch]:
    """Check the network is a tree rooted at a single slack bus.

    Returns the branches reoriented parent-to-child and ordered so that each
    branch's to_bus subtree appears before the branch itself (the backward
    sweep order).  Raises ``CaseError`` on multiple or missing slacks,
    unknown bus references, cycles or disconnected buses.
    """
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus ids")
    slacks = [b.id for b in buses if b.kind == "slack"]
    if len(slacks) != 1:
        raise CaseError(f"exactly one slack bus required, found {len(slacks)}")
    for b in buses:
        if b.kind not in BUS_KINDS:
            raise CaseError(f"bus {b.id!r} has unknown kind {b.kind!r}")

    known = set(ids)
    adjacency: Dict[str, List[Branch]] = {i: [] for i in ids}
    branch_ids = set()
    for br in branches:
        if br.id in branch_ids:
            raise CaseError(f"duplicate branch id {br.id!r}")
        branch_ids.add(br.id)
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseError(f"branch {br.id!r} references unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {br.id!r} is a self loop")
        if br.resistance_ohm < 0 or br.reactance_ohm < 0:
            raise CaseError(f"branch {br.id!r} has negative impedance")
        if br.resistance_ohm == 0 and br.reactance_ohm == 0:
            raise CaseError(f"branch {br.id!r} has zero impedance")
        adjacency[br.from_bus].append(br)
        adjacency[br.to_bus].append(br)

    root = slacks[0]
    visited = {root}
    ordered: List[Branch] = []

    def descend(bus: str, via: Optional[Branch]) -> None:
        for br in adjacency[bus]:
            if br is via:
                continue
            child = br.to_bus if br.from_bus == bus else br.from_bus
            if child in visited:
                raise CaseError(f"network has a cycle through branch {br.id!r}")
            visited.add(child)
            oriented = br if br.from_bus == bus else replace(br, from_bus=bus, to_bus=child)
            descend(child, br)
            ordered.append(oriented)

    descend(root, None)
    if len(visited) != len(ids):
        missing = sorted(set(ids) - visited)
        raise CaseError(f"buses not connected to the slack: {missing}")
    return ordered


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise CaseError(message)


def validate_case(case: MicrogridCase) -> MicrogridCase:
    """Full semantic validation; returns the case unchanged when sound."""
    T = case.horizon
    _require(T >= 1, "horizon must be at least 1")
    _require(case.period_hours > 0, "period_hours must be positive")
    _require(case.base_voltage_kv > 0 and case.base_power_kva > 0, "bases must be positive")
    vmin, vmax = case.voltage_limits
    _require(0 < vmin < 1 < vmax, "voltage limits must bracket 1.0 pu")
    _require(case.grid_limit_kw > 0, "grid import limit must be positive")
    if case.export_limit_kw is not None:
        _require(case.export_limit_kw >= 0, "grid export limit must be non-negative")

    validate_radial(case.buses, case.branches)
    bus_ids = set(case.bus_ids())
    branch_ids = {b.id for b in case.branches}

    _require(len(case.prices_ct_per_kwh) == T, "price series length must equal the horizon")

    for lp in case.load_points:
        _require(lp.bus in bus_ids, f"load point references unknown bus {lp.bus!r}")
        _require(lp.category in LOAD_CATEGORIES, f"unknown load category {lp.category!r}")
        _require(len(lp.profile_kw) == T, f"load profile at {lp.bus!r} must have {T} entries")
        _require(all(p >= 0 for p in lp.profile_kw), f"load profile at {lp.bus!r} has negative entries")
        _require(0 < lp.power_factor <= 1, f"load at {lp.bus!r} needs power factor in (0, 1]")
        case.outage_costs.cost(lp.category, 1.0)

    seen_units = set()
    for u in case.units:
        _require(u.name not in seen_units, f"duplicate unit name {u.name!r}")
        seen_units.add(u.name)
        _require(u.bus in bus_ids, f"unit {u.name!r} references unknown bus {u.bus!r}")
        _require(0 <= u.p_min_kw <= u.p_max_kw, f"unit {u.name!r} has inconsistent power limits")
        if u.renewable:
            profile = case.availability_kw.get(u.name)
            _require(profile is not None, f"renewable unit {u.name!r} has no availability profile")
            _require(len(profile) == T, f"availability for {u.name!r} must have {T} entries")  # type: ignore[arg-type]
            _require(
                all(0 <= a <= u.p_max_kw + 1e-9 for a in profile),  # type: ignore[union-attr]
                f"availability for {u.name!r} must stay within [0, p_max]",
            )
    for name in case.availability_kw:
        _require(name in seen_units, f"availability profile for unknown unit {name!r}")
        _require(case.unit(name).renewable, f"unit {name!r} is not renewable but has availability")

    if case.battery is not None:
        b = case.battery
        _require(b.bus in bus_ids, f"battery references unknown bus {b.bus!r}")
        _require(0 <= b.soc_min_kwh < b.soc_max_kwh, "battery SOC bounds are inconsistent")
        _require(b.soc_min_kwh <= b.soc_initial_kwh <= b.soc_max_kwh, "battery initial SOC out of bounds")
        _require(b.p_max_kw > 0, "battery power limit must be positive")
        _require(0 < b.eta_charge <= 1 and 0 < b.eta_discharge <= 1, "battery efficiencies must be in (0, 1]")
        _require(0 <= b.self_discharge_per_h < 1, "battery self-discharge must be in [0, 1)")
        _require(b.usage_cost_ct_per_kwh >= 0, "battery usage cost must be non-negative")

    seen_cont = set()
    for c in case.contingencies:
        _require(c.id not in seen_cont, f"duplicate contingency id {c.id!r}")
        seen_cont.add(c.id)
        _require(
            c.element == TRANSFORMER_ELEMENT or c.element in branch_ids,
            f"contingency {c.id!r} references unknown element {c.element!r}",
        )
        _require(c.rate_per_hour >= 0, f"contingency {c.id!r} has negative failure rate")
        _require(c.repair_hours > 0, f"contingency {c.id!r} needs positive repair time")

    if case.weights is not None:
        _require(len(case.weights) == 4, "weights must have four entries")
        _require(all(w >= 0 for w in case.weights), "weights must be non-negative")
        _require(abs(sum(case.weights) - 1.0) <= 1e-9, "weights must sum to 1")
    if case.judgment_matrix is not None:
        n = len(case.judgment_matrix)
        _require(n == 4, "judgment matrix must be 4x4")
        _require(all(len(row) == n for row in case.judgment_matrix), "judgment matrix must be square")
    if case.dr is not None:
        _require(0 <= case.dr.shiftable_fraction < 1, "shiftable fraction must be in [0, 1)")
        _require(len(case.dr.participating) > 0, "DR program needs participating categories")
        for cat in case.dr.participating:
            _require(cat in LOAD_CATEGORIES, f"unknown DR category {cat!r}")
        _require(case.dr.incentive_ct_per_kwh >= 0, "DR incentive must be non-negative")
    return case


def case_from_dict(doc: Dict) -> MicrogridCase:
    """Build and validate a case from a parsed YAML document."""
    if not isinstance(doc, dict):
        raise CaseError("case document must be a mapping")
    version = doc.get("format_version")
    if version != CASE_FORMAT_VERSION:
        raise CaseError(f"unsupported case format_version {version!r}, expected {CASE_FORMAT_VERSION}")

    def need(key: str) -> object:
        if key not in doc:
            raise CaseError(f"missing required field {key!r}")
        return doc[key]

    try:
        base = doc.get("base", {})
        grid = need("grid")
        buses = tuple(Bus(str(b["id"]), str(b.get("kind", "load")), b.get("base_voltage_kv")) for b in need("buses"))  # type: ignore[union-attr]
        branches = tuple(
            Branch(str(b["id"]), str(b["from"]), str(b["to"]), float(b["resistance_ohm"]), float(b["reactance_ohm"]))
            for b in need("branches")  # type: ignore[union-attr]
        )
        loads = tuple(
            LoadPoint(
                str(l["bus"]),
                str(l["category"]),
                tuple(float(p) for p in l["profile_kw"]),
                float(l.get("power_factor", 0.9)),
            )
            for l in need("loads")  # type: ignore[union-attr]
        )
        units = tuple(
            DgUnit(
                str(u["name"]),
                str(u["bus"]),
                float(u.get("p_min_kw", 0.0)),
                float(u["p_max_kw"]),
                float(u["cost_slope_ct_per_kwh"]),
                float(u.get("cost_fixed_ct_per_h", 0.0)),
                bool(u.get("renewable", False)),
            )
            for u in doc.get("units", [])
        )
        availability = {
            str(name): tuple(float(p) for p in profile)
            for name, profile in doc.get("availability", {}).items()
        }
        battery = None
        if doc.get("battery") is not None:
            b = doc["battery"]
            battery = Battery(
                bus=str(b["bus"]),
                soc_min_kwh=float(b["soc_min_kwh"]),
                soc_max_kwh=float(b["soc_max_kwh"]),
                soc_initial_kwh=float(b["soc_initial_kwh"]),
                p_max_kw=float(b["p_max_kw"]),
                eta_charge=float(b.get("eta_charge", 0.9)),
                eta_discharge=float(b.get("eta_discharge", 0.9)),
                self_discharge_per_h=float(b.get("self_discharge_per_h", 0.002)),
                usage_cost_ct_per_kwh=float(b.get("usage_cost_ct_per_kwh", 0.38)),
            )
        contingencies = tuple(
            Contingency(str(c["id"]), str(c["element"]), float(c["rate_per_hour"]), float(c["repair_hours"]))
            for c in doc.get("contingencies", [])
        )
        limits = doc.get("voltage_limits", {"min": 0.95, "max": 1.05})
        dr = None
        if doc.get("demand_response") is not None:
            d = doc["demand_response"]
            dr = DrProgram(
                shiftable_fraction=float(d.get("shiftable_fraction", 0.15)),
                participating=tuple(d.get("participating", LOAD_CATEGORIES)),
                incentive_ct_per_kwh=float(d.get("incentive_ct_per_kwh", 0.0)),
            )
        weights = doc.get("weights")
        judgment = doc.get("judgment_matrix")
        case = MicrogridCase(
            name=str(doc.get("name", "unnamed")),
            buses=buses,
            branches=branches,
            load_points=loads,
            units=units,
            battery=battery,
            grid_limit_kw=float(grid["import_limit_kw"]),  # type: ignore[index]
            export_limit_kw=(None if grid.get("export_limit_kw") is None else float(grid["export_limit_kw"])),  # type: ignore[union-attr]
            prices_ct_per_kwh=tuple(float(p) for p in grid["price_ct_per_kwh"]),  # type: ignore[index]
            availability_kw=availability,
            contingencies=contingencies,
            outage_costs=OutageCostTable.from_mapping(doc.get("outage_costs", {})),
            voltage_limits=(float(limits["min"]), float(limits["max"])),
            horizon=int(doc.get("horizon", 24)),
            period_hours=float(doc.get("period_hours", 1.0)),
            base_voltage_kv=float(base.get("voltage_kv", 0.4)),
            base_power_kva=float(base.get("power_kva", 100.0)),
            weights=(None if weights is None else tuple(float(w) for w in weights)),  # type: ignore[arg-type]
            judgment_matrix=(
                None if judgment is None else tuple(tuple(float(v) for v in row) for row in judgment)
            ),
            dr=dr,
        )
    except CaseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseError(f"malformed case document: {exc}") from exc
    return validate_case(case)


def case_to_dict(case: MicrogridCase) -> Dict:
    """Inverse of case_from_dict; round-trips through YAML without loss."""
    doc: Dict = {
        "format_version": CASE_FORMAT_VERSION,
        "name": case.name,
        "base": {"voltage_kv": case.base_voltage_kv, "power_kva": case.base_power_kva},
        "horizon": case.horizon,
        "period_hours": case.period_hours,
        "voltage_limits": {"min": case.voltage_limits[0], "max": case.voltage_limits[1]},
        "grid": {
            "import_limit_kw": case.grid_limit_kw,
            "price_ct_per_kwh": list(case.prices_ct_per_kwh),
        },
        "buses": [
            {"id": b.id, "kind": b.kind, **({"base_voltage_kv": b.base_voltage_kv} if b.base_voltage_kv is not None else {})}
            for b in case.buses
        ],
        "branches": [
            {
                "id": b.id,
                "from": b.from_bus,
                "to": b.to_bus,
                "resistance_ohm": b.resistance_ohm,
                "reactance_ohm": b.reactance_ohm,
            }
            for b in case.branches
        ],
        "loads": [
            {
                "bus": lp.bus,
                "category": lp.category,
                "power_factor": lp.power_factor,
                "profile_kw": list(lp.profile_kw),
            }
            for lp in case.load_points
        ],
        "units": [
            {
                "name": u.name,
                "bus": u.bus,
                "p_min_kw": u.p_min_kw,
                "p_max_kw": u.p_max_kw,
                "cost_slope_ct_per_kwh": u.cost_slope_ct_per_kwh,
                "cost_fixed_ct_per_h": u.cost_fixed_ct_per_h,
                "renewable": u.renewable,
            }
            for u in case.units
        ],
        "availability": {name: list(profile) for name, profile in case.availability_kw.items()},
        "contingencies": [
            {"id": c.id, "element": c.element, "rate_per_hour": c.rate_per_hour, "repair_hours": c.repair_hours}
            for c in case.contingencies
        ],
        "outage_costs": case.outage_costs.to_mapping(),
    }
    if case.export_limit_kw is not None:
        doc["grid"]["export_limit_kw"] = case.export_limit_kw
    if case.battery is not None:
        b = case.battery
        doc["battery"] = {
            "bus": b.bus,
            "soc_min_kwh": b.soc_min_kwh,
            "soc_max_kwh": b.soc_max_kwh,
            "soc_initial_kwh": b.soc_initial_kwh,
            "p_max_kw": b.p_max_kw,
            "eta_charge": b.eta_charge,
            "eta_discharge": b.eta_discharge,
            "self_discharge_per_h": b.self_discharge_per_h,
            "usage_cost_ct_per_kwh": b.usage_cost_ct_per_kwh,
        }
    if case.weights is not None:
        doc["weights"] = list(case.weights)
    if case.judgment_matrix is not None:
        doc["judgment_matrix"] = [list(row) for row in case.judgment_matrix]
    if case.dr is not None:
        doc["demand_response"] = {
            "shiftable_fraction": case.dr.shiftable_fraction,
            "participating": list(case.dr.participating),
            "incentive_ct_per_kwh": case.dr.incentive_ct_per_kwh,
        }
    return doc


def load_case(path) -> MicrogridCase:
    """Read and validate a case file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise CaseError(f"cannot parse case file: {exc}") from exc
    return case_from_dict(doc)


def save_case(case: MicrogridCase, path) -> None:
    """Write a case file that load_case reads back structurally identical."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(case_to_dict(case), fh, sort_keys=False, default_flow_style=None)


def benchmark_case_path() -> str:
    """Filesystem path of the packaged benchmark case."""
    return str(resources.files(__package__).joinpath("data/benchmark.case"))


def load_benchmark_case() -> MicrogridCase:
    return load_case(benchmark_case_path())
