"""Grid model: case-file parsing, validation, and canonical JSON serialization.

The in-memory network is a DC description: per-line susceptances and flow
ratings, active-power generators with (linear, quadratic) cost coefficients,
and active-power loads. Everything is per-unit on the system MVA base.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources

logger = logging.getLogger(__name__)


class MalformedCase(ValueError):
    """The case text is structurally unusable (missing table, bad field)."""


class InfeasibleCase(ValueError):
    """The case parsed but violates a network invariant."""


class BusKind(str, enum.Enum):
    SLACK = "slack"
    GENERATOR = "generator"
    LOAD = "load"
    PASSIVE = "passive"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float  # per-unit, 1/x of the branch
    rating: float  # per-unit flow magnitude limit
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    cost_linear: float  # per-unit power coefficient
    cost_quadratic: float


@dataclass(frozen=True)
class Load:
    bus: int
    p_demand: float


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    base_mva: float

    @property
    def num_buses(self) -> int:
        return len(self.buses)

    @property
    def num_lines(self) -> int:
        return len(self.lines)

    def total_demand(self) -> float:
        return sum(load.p_demand for load in self.loads)

    def total_capacity(self) -> float:
        return sum(gen.p_max for gen in self.generators)


# MATPOWER column layouts (1-based file docs, 0-based here).
_BUS_COLS = 13
_GEN_COLS = 10  # columns beyond Pmin are optional extensions
_BRANCH_COLS = 11  # angmin/angmax are optional
_GENCOST_MIN_COLS = 5


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _extract_matrix(text: str, name: str) -> list[list[float]]:
    match = re.search(rf"mpc\.{name}\s*=\s*\[(.*?)\];", text, flags=re.DOTALL)
    if match is None:
        raise MalformedCase(f"table mpc.{name} not found")
    rows = []
    for row_no, chunk in enumerate(match.group(1).split(";"), start=1):
        fields = chunk.split()
        if not fields:
            continue
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise MalformedCase(f"table mpc.{name} row {row_no}: non-numeric field ({exc})") from None
    if not rows:
        raise MalformedCase(f"table mpc.{name} is empty")
    return rows


def _extract_scalar(text: str, name: str) -> float:
    match = re.search(rf"mpc\.{name}\s*=\s*([-+0-9.eE]+)\s*;", text)
    if match is None:
        raise MalformedCase(f"scalar mpc.{name} not found")
    return float(match.group(1))


def parse_case(text: str) -> Network:
    """Parse MATPOWER-style case text into a validated Network.

    Only the mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch, and mpc.gencost
    tables are consumed. Bus ids are renumbered to a contiguous 0-based
    range preserving file order; branches keep file order (out-of-service
    rows are dropped). Power quantities are converted to per-unit on
    baseMVA; cost coefficients are rebased so cost(p_pu) matches cost(p_MW).

    AC-only branch data (resistance, charging, tap ratio, shift angle) is
    read and ignored; a debug log line summarizes what was dropped.
    """
    stripped = _strip_comments(text)
    base_mva = _extract_scalar(stripped, "baseMVA")
    if base_mva <= 0:
        raise MalformedCase("mpc.baseMVA must be positive")
    bus_rows = _extract_matrix(stripped, "bus")
    gen_rows = _extract_matrix(stripped, "gen")
    branch_rows = _extract_matrix(stripped, "branch")
    gencost_rows = _extract_matrix(stripped, "gencost")

    for name, rows, want in (("bus", bus_rows, _BUS_COLS), ("gen", gen_rows, _GEN_COLS), ("branch", branch_rows, _BRANCH_COLS)):
        for row_no, row in enumerate(rows, start=1):
            if len(row) < want:
                raise MalformedCase(f"table mpc.{name} row {row_no}: expected >= {want} columns, got {len(row)}")

    # Buses: renumber in file order.
    id_map: dict[int, int] = {}
    buses: list[Bus] = []
    loads: list[Load] = []
    for row_no, row in enumerate(bus_rows, start=1):
        raw_id = int(row[0])
        if raw_id in id_map:
            raise MalformedCase(f"table mpc.bus row {row_no}: duplicate bus id {raw_id}")
        idx = len(buses)
        id_map[raw_id] = idx
        bus_type = int(row[1])
        p_demand = row[2] / base_mva
        if bus_type == 3:
            kind = BusKind.SLACK
        elif bus_type == 2:
            kind = BusKind.GENERATOR
        elif bus_type == 1:
            kind = BusKind.LOAD if p_demand != 0.0 else BusKind.PASSIVE
        else:
            raise MalformedCase(f"table mpc.bus row {row_no}: unsupported bus type {bus_type}")
        buses.append(Bus(id=idx, kind=kind))
        if p_demand != 0.0:
            loads.append(Load(bus=idx, p_demand=p_demand))

    # Branches: keep in-service rows in file order.
    lines: list[Line] = []
    dropped = 0
    ignored_ac_fields = 0
    for row_no, row in enumerate(branch_rows, start=1):
        fbus, tbus = int(row[0]), int(row[1])
        if fbus not in id_map or tbus not in id_map:
            raise MalformedCase(f"table mpc.branch row {row_no}: unknown bus reference {fbus}-{tbus}")
        if int(row[10]) == 0:
            dropped += 1
            continue
        reactance = row[3]
        if reactance <= 0:
            raise InfeasibleCase(f"table mpc.branch row {row_no}: reactance must be > 0 for the DC model")
        if row[2] != 0 or row[4] != 0 or row[8] not in (0.0, 1.0) or row[9] != 0:
            ignored_ac_fields += 1
        lines.append(
            Line(
                id=len(lines),
                from_bus=id_map[fbus],
                to_bus=id_map[tbus],
                susceptance=1.0 / reactance,
                rating=row[5] / base_mva,
                in_service=True,
            )
        )
    if dropped:
        logger.debug("dropped %d out-of-service branches", dropped)
    if ignored_ac_fields:
        logger.debug("ignored AC-only branch fields (r, charging, ratio, angle) on %d branches", ignored_ac_fields)

    # Generators paired with the leading gencost rows (MATPOWER appends
    # reactive-cost rows after the active ones; those are ignored).
    if len(gencost_rows) < len(gen_rows):
        raise MalformedCase(f"table mpc.gencost: {len(gencost_rows)} rows for {len(gen_rows)} generators")
    generators: list[Generator] = []
    for row_no, (grow, crow) in enumerate(zip(gen_rows, gencost_rows), start=1):
        gbus = int(grow[0])
        if gbus not in id_map:
            raise MalformedCase(f"table mpc.gen row {row_no}: unknown bus {gbus}")
        if int(grow[7]) == 0:
            continue
        if len(crow) < _GENCOST_MIN_COLS and not (len(crow) == 4 + int(crow[3])):
            raise MalformedCase(f"table mpc.gencost row {row_no}: too few columns")
        model = int(crow[0])
        if model != 2:
            raise MalformedCase(f"table mpc.gencost row {row_no}: only polynomial cost model 2 is supported")
        ncoef = int(crow[3])
        coeffs = crow[4 : 4 + ncoef]
        if len(coeffs) != ncoef:
            raise MalformedCase(f"table mpc.gencost row {row_no}: expected {ncoef} coefficients")
        c2 = c1 = 0.0
        if ncoef >= 3:
            c2, c1 = coeffs[-3], coeffs[-2]
            if any(c != 0 for c in coeffs[:-3]):
                raise MalformedCase(f"table mpc.gencost row {row_no}: polynomial degree > 2 is not supported")
        elif ncoef == 2:
            c1 = coeffs[0]
        generators.append(
            Generator(
                bus=id_map[gbus],
                p_min=grow[9] / base_mva,
                p_max=grow[8] / base_mva,
                cost_linear=c1 * base_mva,
                cost_quadratic=c2 * base_mva * base_mva,
            )
        )

    network = Network(
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(generators),
        loads=tuple(loads),
        base_mva=base_mva,
    )
    violations = validate(network)
    if violations:
        raise InfeasibleCase("; ".join(violations))
    return network


def validate(network: Network) -> list[str]:
    """Return a description of every violated network invariant (empty if valid)."""
    violations: list[str] = []
    n = network.num_buses
    ids = [bus.id for bus in network.buses]
    if ids != list(range(n)):
        violations.append("buses: ids must be contiguous 0-based and in order")
        return violations  # downstream checks assume normalized ids

    slack_count = sum(1 for bus in network.buses if bus.kind is BusKind.SLACK)
    if slack_count != 1:
        violations.append(f"buses: expected exactly 1 slack bus, found {slack_count}")

    for line in network.lines:
        tag = f"line {line.id}"
        if not (0 <= line.from_bus < n and 0 <= line.to_bus < n):
            violations.append(f"{tag}: endpoint reference out of range")
            continue
        if line.from_bus == line.to_bus:
            violations.append(f"{tag}: from_bus equals to_bus")
        if line.rating <= 0:
            violations.append(f"{tag}: rating must be > 0")
        if line.susceptance <= 0:
            violations.append(f"{tag}: susceptance must be > 0")
    line_ids = [line.id for line in network.lines]
    if line_ids != list(range(len(line_ids))):
        violations.append("lines: ids must be contiguous 0-based and in order")

    for k, gen in enumerate(network.generators):
        tag = f"generator {k}"
        if not 0 <= gen.bus < n:
            violations.append(f"{tag}: bus reference out of range")
        if not 0 <= gen.p_min <= gen.p_max:
            violations.append(f"{tag}: requires 0 <= p_min <= p_max")

    for k, load in enumerate(network.loads):
        tag = f"load {k}"
        if not 0 <= load.bus < n:
            violations.append(f"{tag}: bus reference out of range")
        if load.p_demand < 0:
            violations.append(f"{tag}: p_demand must be >= 0")

    # Connectivity over in-service lines.
    if n > 0:
        parent = list(range(n))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for line in network.lines:
            if line.in_service and 0 <= line.from_bus < n and 0 <= line.to_bus < n:
                ra, rb = find(line.from_bus), find(line.to_bus)
                if ra != rb:
                    parent[ra] = rb
        roots = {find(i) for i in range(n)}
        if len(roots) != 1:
            violations.append(f"network: baseline graph has {len(roots)} components, expected 1")

    if network.total_capacity() < network.total_demand():
        violations.append(
            f"network: total generation capacity {network.total_capacity():.6g} p.u. "
            f"below total demand {network.total_demand():.6g} p.u."
        )
    return violations


def network_to_json(network: Network) -> str:
    """Serialize to the canonical network JSON (stable field order)."""
    doc = {
        "base_mva": network.base_mva,
        "buses": [{"id": b.id, "kind": b.kind.value} for b in network.buses],
        "lines": [
            {
                "id": ln.id,
                "from_bus": ln.from_bus,
                "to_bus": ln.to_bus,
                "susceptance": ln.susceptance,
                "rating": ln.rating,
                "in_service": ln.in_service,
            }
            for ln in network.lines
        ],
        "generators": [
            {
                "bus": g.bus,
                "p_min": g.p_min,
                "p_max": g.p_max,
                "cost_linear": g.cost_linear,
                "cost_quadratic": g.cost_quadratic,
            }
            for g in network.generators
        ],
        "loads": [{"bus": load.bus, "p_demand": load.p_demand} for load in network.loads],
    }
    return json.dumps(doc, indent=2)


def network_from_json(text: str) -> Network:
    doc = json.loads(text)
    return Network(
        buses=tuple(Bus(id=b["id"], kind=BusKind(b["kind"])) for b in doc["buses"]),
        lines=tuple(
            Line(
                id=ln["id"],
                from_bus=ln["from_bus"],
                to_bus=ln["to_bus"],
                susceptance=ln["susceptance"],
                rating=ln["rating"],
                in_service=ln["in_service"],
            )
            for ln in doc["lines"]
        ),
        generators=tuple(
            Generator(
                bus=g["bus"],
                p_min=g["p_min"],
                p_max=g["p_max"],
                cost_linear=g["cost_linear"],
                cost_quadratic=g["cost_quadratic"],
            )
            for g in doc["generators"]
        ),
        loads=tuple(Load(bus=d["bus"], p_demand=d["p_demand"]) for d in doc["loads"]),
        base_mva=doc["base_mva"],
    )


def bundled_case_text(name: str = "case30") -> str:
    """Return the text of a case file shipped with the package."""
    return resources.files("tightline.cases").joinpath(f"{name}.m").read_text(encoding="utf-8")


def load_bundled_case(name: str = "case30") -> Network:
    return parse_case(bundled_case_text(name))
