"""DC power flow and optimal dispatch.

The pre-attack equilibrium is a DC optimal power flow: minimize generation
cost subject to per-bus power balance, generator bounds, and line flow
limits. During cascades the same network is repeatedly islanded,
rebalanced, and re-solved for flows, so the per-network array views are
cached and all operations are pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .grid import BusKind, Network

BALANCE_TOL = 1e-8
SOLVE_TOL = 1e-8

# Piecewise-linear segments used to approximate quadratic generation cost.
COST_SEGMENTS = 8

_LINPROG_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


class Infeasible(RuntimeError):
    """No dispatch satisfies the generation bounds and flow limits."""


class SingularSystem(RuntimeError):
    """The DC network equations could not be solved (bad susceptance data)."""


@dataclass(frozen=True)
class DispatchState:
    generation: np.ndarray  # per-generator active power, p.u.
    angles: np.ndarray  # per-bus voltage angle, rad
    flows: np.ndarray  # per-line signed flow, p.u.
    objective_cost: float


@dataclass(frozen=True)
class IslandPartition:
    components: tuple[frozenset[int], ...]  # bus-id sets, ordered by smallest member
    line_component: dict[int, int]  # surviving line id -> component index
    labels: np.ndarray  # per-bus component index


@dataclass(frozen=True)
class Injection:
    net_power: np.ndarray  # per-bus generation minus served demand, p.u.
    generation: np.ndarray  # per-generator post-rebalance output, p.u.
    served_demand: np.ndarray  # per-load served demand, p.u.
    shed_per_island: np.ndarray  # per-component unserved demand, p.u.
    curtailed_per_island: np.ndarray  # per-component generation pushed below p_min, p.u.

    @property
    def total_shed(self) -> float:
        return float(self.shed_per_island.sum())


@dataclass(frozen=True)
class NetworkArrays:
    """Flat array view of a Network, cached per instance for hot loops."""

    num_buses: int
    num_lines: int
    from_bus: np.ndarray
    to_bus: np.ndarray
    susceptance: np.ndarray
    rating: np.ndarray
    in_service: np.ndarray
    gen_bus: np.ndarray
    gen_min: np.ndarray
    gen_max: np.ndarray
    load_bus: np.ndarray
    load_demand: np.ndarray


@lru_cache(maxsize=8)
def network_arrays(network: Network) -> NetworkArrays:
    return NetworkArrays(
        num_buses=network.num_buses,
        num_lines=network.num_lines,
        from_bus=np.array([ln.from_bus for ln in network.lines], dtype=np.intp),
        to_bus=np.array([ln.to_bus for ln in network.lines], dtype=np.intp),
        susceptance=np.array([ln.susceptance for ln in network.lines]),
        rating=np.array([ln.rating for ln in network.lines]),
        in_service=np.array([ln.in_service for ln in network.lines], dtype=bool),
        gen_bus=np.array([g.bus for g in network.generators], dtype=np.intp),
        gen_min=np.array([g.p_min for g in network.generators]),
        gen_max=np.array([g.p_max for g in network.generators]),
        load_bus=np.array([ld.bus for ld in network.loads], dtype=np.intp),
        load_demand=np.array([ld.p_demand for ld in network.loads]),
    )


def _alive_mask(arrays: NetworkArrays, outaged) -> np.ndarray:
    alive = arrays.in_service.copy()
    if outaged:
        alive[np.fromiter(outaged, dtype=np.intp)] = False
    return alive


def _component_labels(num_buses: int, from_bus: np.ndarray, to_bus: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Union-find connected components; labels are 0..k-1 ordered by smallest bus id."""
    parent = list(range(num_buses))

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for i, j in zip(from_bus[alive].tolist(), to_bus[alive].tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            if ri < rj:
                parent[rj] = ri
            else:
                parent[ri] = rj
    roots = [find(i) for i in range(num_buses)]
    relabel: dict[int, int] = {}
    labels = np.empty(num_buses, dtype=np.intp)
    for i, r in enumerate(roots):
        labels[i] = relabel.setdefault(r, len(relabel))
    return labels


def island_partition(network: Network, outaged: set[int] | frozenset[int] = frozenset()) -> IslandPartition:
    """Connected components of the grid with the outaged lines removed."""
    arrays = network_arrays(network)
    alive = _alive_mask(arrays, outaged)
    labels = _component_labels(arrays.num_buses, arrays.from_bus, arrays.to_bus, alive)
    num_comp = int(labels.max()) + 1 if arrays.num_buses else 0
    components = tuple(frozenset(np.flatnonzero(labels == k).tolist()) for k in range(num_comp))
    line_component = {
        int(line_id): int(labels[arrays.from_bus[line_id]]) for line_id in np.flatnonzero(alive)
    }
    return IslandPartition(components=components, line_component=line_component, labels=labels)


def _clip_scale(profile: np.ndarray, p_min: np.ndarray, p_max: np.ndarray, target: float) -> np.ndarray:
    """Solve sum(clip(alpha * profile, p_min, p_max)) == target for alpha >= 0.

    The left side is piecewise linear and nondecreasing in alpha, so the
    exact alpha is found by scanning its breakpoints. Requires
    sum(p_min) <= target <= sum(p_max) and a profile able to reach target.
    """
    pos = profile > 0
    if not pos.any():
        return p_min.copy()
    breaks = np.concatenate([p_min[pos] / profile[pos], p_max[pos] / profile[pos], [0.0]])
    breaks = np.unique(breaks[breaks >= 0])
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        val_hi = np.clip(hi * profile, p_min, p_max).sum()
        if val_hi >= target:
            lo_clip = np.clip(lo * profile, p_min, p_max)
            mid = 0.5 * (lo + hi)
            free = pos & (mid * profile >= p_min) & (mid * profile <= p_max)
            slope = profile[free].sum()
            if slope <= 0:
                return np.clip(hi * profile, p_min, p_max)
            alpha = lo + (target - lo_clip.sum()) / slope
            return np.clip(alpha * profile, p_min, p_max)
    # Above the last breakpoint everything saturates at p_max.
    return p_max.copy()


def rebalance(network: Network, partition: IslandPartition, dispatch: DispatchState) -> Injection:
    """Balance each island by scaling generation toward demand or shedding load.

    Per island: if generation capacity covers demand, all generators are
    scaled by a common factor toward the island demand (pinned at their
    bounds where the factor would violate them); if demand exceeds
    capacity, generators run at p_max and load is shed proportionally;
    islands without generators shed everything. If island demand falls
    below the sum of generator minimums, generation is curtailed
    proportionally below p_min (recorded separately; no load is shed).
    """
    arrays = network_arrays(network)
    labels = partition.labels
    num_comp = len(partition.components)
    gen_labels = labels[arrays.gen_bus]
    load_labels = labels[arrays.load_bus]

    generation = np.zeros(arrays.gen_bus.size)
    served = np.zeros(arrays.load_bus.size)
    shed = np.zeros(num_comp)
    curtailed = np.zeros(num_comp)

    for comp in range(num_comp):
        gmask = gen_labels == comp
        lmask = load_labels == comp
        demand = float(arrays.load_demand[lmask].sum())
        if not gmask.any():
            shed[comp] = demand
            continue
        p_min, p_max = arrays.gen_min[gmask], arrays.gen_max[gmask]
        capacity = float(p_max.sum())
        floor = float(p_min.sum())
        if capacity < demand:
            generation[gmask] = p_max
            served[lmask] = arrays.load_demand[lmask] * (capacity / demand)
            shed[comp] = demand - capacity
        elif demand < floor:
            generation[gmask] = p_min * (demand / floor)
            served[lmask] = arrays.load_demand[lmask]
            curtailed[comp] = floor - demand
        else:
            profile = dispatch.generation[gmask]
            reachable = np.where(profile > 0, p_max, p_min).sum()
            if reachable < demand:
                profile = p_max  # equilibrium profile cannot reach demand; fall back to capacity shape
            generation[gmask] = _clip_scale(profile, p_min, p_max, demand)
            served[lmask] = arrays.load_demand[lmask]

    net_power = np.zeros(arrays.num_buses)
    np.add.at(net_power, arrays.gen_bus, generation)
    np.subtract.at(net_power, arrays.load_bus, served)
    return Injection(
        net_power=net_power,
        generation=generation,
        served_demand=served,
        shed_per_island=shed,
        curtailed_per_island=curtailed,
    )


def dc_power_flow(
    network: Network,
    outaged: set[int] | frozenset[int],
    injection: Injection | np.ndarray,
    partition: IslandPartition | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve B'theta = P per island; returns (angles, per-line signed flows).

    The reference bus of each island (its lowest bus id) is pinned to
    angle 0. Outaged lines carry zero flow. Injections must balance per
    island within BALANCE_TOL.
    """
    arrays = network_arrays(network)
    net_power = injection.net_power if isinstance(injection, Injection) else np.asarray(injection, dtype=float)
    if partition is None:
        partition = island_partition(network, outaged)
    labels = partition.labels
    n = arrays.num_buses

    island_sums = np.bincount(labels, weights=net_power, minlength=len(partition.components))
    worst = int(np.argmax(np.abs(island_sums))) if island_sums.size else 0
    if island_sums.size and abs(island_sums[worst]) > BALANCE_TOL:
        raise ValueError(f"island {worst} injections unbalanced by {island_sums[worst]:.3e} p.u.")

    alive = _alive_mask(arrays, outaged)
    i_idx = arrays.from_bus[alive]
    j_idx = arrays.to_bus[alive]
    b_val = arrays.susceptance[alive]
    laplacian = np.zeros((n, n))
    np.add.at(laplacian, (i_idx, i_idx), b_val)
    np.add.at(laplacian, (j_idx, j_idx), b_val)
    np.subtract.at(laplacian, (i_idx, j_idx), b_val)
    np.subtract.at(laplacian, (j_idx, i_idx), b_val)

    angles = np.zeros(n)
    for comp in range(len(partition.components)):
        buses = np.flatnonzero(labels == comp)
        if buses.size <= 1:
            continue
        keep = buses[1:]  # lowest id is the reference at angle 0
        sub = laplacian[np.ix_(keep, keep)]
        try:
            theta = np.linalg.solve(sub, net_power[keep])
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"island containing bus {buses[0]} is singular: {exc}") from None
        if not np.all(np.isfinite(theta)):
            raise SingularSystem(f"island containing bus {buses[0]} produced non-finite angles")
        angles[keep] = theta

    flows = np.zeros(arrays.num_lines)
    flows[alive] = b_val * (angles[i_idx] - angles[j_idx])
    return angles, flows


def _cost_segments(gen) -> tuple[np.ndarray, np.ndarray]:
    """Chord slopes and widths of the piecewise-linear cost over [p_min, p_max]."""
    span = gen.p_max - gen.p_min
    if span <= 0:
        return np.zeros(0), np.zeros(0)
    nseg = COST_SEGMENTS if gen.cost_quadratic != 0 else 1
    edges = np.linspace(gen.p_min, gen.p_max, nseg + 1)
    widths = np.diff(edges)
    slopes = gen.cost_linear + gen.cost_quadratic * (edges[:-1] + edges[1:])
    return slopes, widths


def piecewise_cost(network: Network, generation: np.ndarray) -> float:
    """Evaluate the piecewise-linear cost model at a dispatch."""
    total = 0.0
    for gen, p in zip(network.generators, generation):
        slopes, widths = _cost_segments(gen)
        total += gen.cost_linear * gen.p_min + gen.cost_quadratic * gen.p_min**2
        remaining = p - gen.p_min
        for slope, width in zip(slopes, widths):
            step = min(max(remaining, 0.0), width)
            total += slope * step
            remaining -= step
    return total


def solve_equilibrium(network: Network, limits: np.ndarray | None = None) -> DispatchState:
    """DC optimal power flow: cheapest dispatch meeting demand within line limits.

    Quadratic costs are handled by an 8-segment piecewise-linear envelope,
    which keeps the problem a single LP. `limits` overrides the per-line
    flow bounds (defaults to the line ratings).
    """
    arrays = network_arrays(network)
    n = arrays.num_buses
    if limits is None:
        limits = arrays.rating
    else:
        limits = np.asarray(limits, dtype=float)
        if limits.shape != (arrays.num_lines,):
            raise ValueError(f"limits must have one entry per line ({arrays.num_lines})")

    seg_slopes: list[float] = []
    seg_widths: list[float] = []
    seg_gen: list[int] = []
    for k, gen in enumerate(network.generators):
        slopes, widths = _cost_segments(gen)
        seg_slopes.extend(slopes.tolist())
        seg_widths.extend(widths.tolist())
        seg_gen.extend([k] * len(slopes))
    nseg = len(seg_slopes)
    nvar = n + nseg

    demand = np.zeros(n)
    np.add.at(demand, arrays.load_bus, arrays.load_demand)
    gen_min_at_bus = np.zeros(n)
    np.add.at(gen_min_at_bus, arrays.gen_bus, arrays.gen_min)

    # Equalities: power balance per bus, plus the slack angle pinned to 0.
    slack = next(b.id for b in network.buses if b.kind is BusKind.SLACK)
    a_eq = np.zeros((n + 1, nvar))
    b_eq = np.zeros(n + 1)
    for ln in network.lines:
        if not ln.in_service:
            continue
        b = ln.susceptance
        i, j = ln.from_bus, ln.to_bus
        a_eq[i, i] += b
        a_eq[i, j] -= b
        a_eq[j, j] += b
        a_eq[j, i] -= b
    for s, g in enumerate(seg_gen):
        a_eq[network.generators[g].bus, n + s] = -1.0
    b_eq[:n] = gen_min_at_bus - demand
    a_eq[n, slack] = 1.0

    # Inequalities: |flow| <= limit per in-service line.
    in_service = [ln for ln in network.lines if ln.in_service]
    a_ub = np.zeros((2 * len(in_service), nvar))
    b_ub = np.zeros(2 * len(in_service))
    for r, ln in enumerate(in_service):
        b = ln.susceptance
        a_ub[2 * r, ln.from_bus] = b
        a_ub[2 * r, ln.to_bus] = -b
        b_ub[2 * r] = limits[ln.id]
        a_ub[2 * r + 1, ln.from_bus] = -b
        a_ub[2 * r + 1, ln.to_bus] = b
        b_ub[2 * r + 1] = limits[ln.id]

    cost = np.concatenate([np.zeros(n), np.array(seg_slopes)])
    bounds = [(None, None)] * n + [(0.0, w) for w in seg_widths]
    result = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs", options=_LINPROG_OPTIONS)
    if result.status == 2:
        raise Infeasible("no dispatch satisfies the generator bounds and flow limits")
    if not result.success:
        raise Infeasible(f"dispatch optimization failed: {result.message}")

    angles = result.x[:n]
    segments = result.x[n:]
    generation = arrays.gen_min.copy()
    for s, g in enumerate(seg_gen):
        generation[g] += segments[s]
    flows = np.zeros(arrays.num_lines)
    alive = arrays.in_service
    flows[alive] = arrays.susceptance[alive] * (angles[arrays.from_bus[alive]] - angles[arrays.to_bus[alive]])
    return DispatchState(
        generation=generation,
        angles=angles,
        flows=flows,
        objective_cost=piecewise_cost(network, generation),
    )
