"""Event-driven stochastic cascade simulation and severity estimation.

Cascades start from a random pair of simultaneous line outages. Surviving
lines fail through competing exponential clocks whose rates grow with the
line's loading relative to its (possibly tightened) limit; clocks are
resampled after every trip, which is statistically equivalent to carrying
them because the exponential distribution is memoryless. The rate map is a
declared model and deliberately pluggable: any object with a
``rates(flows, limits)`` method can drive the same event loop.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attack import check_tightening, tighten_limits
from .grid import Network
from .powerflow import (
    DispatchState,
    SingularSystem,
    dc_power_flow,
    island_partition,
    network_arrays,
    rebalance,
)

DEFAULT_T_MAX = 1e5  # seconds, roughly one day

_RATE_EXP_CAP = 700.0  # keeps exp() finite for arbitrarily overloaded lines
_ZERO_LIMIT = 1e-12


@dataclass(frozen=True)
class RateModel:
    """Overload-driven failure rates: base_rate * exp(steepness * (u - 1)).

    u is |flow| / limit; lines below arming_threshold * limit cannot fail.
    """

    base_rate: float = 1e-3  # events/second at u = 1
    steepness: float = 8.0
    arming_threshold: float = 0.97

    def __post_init__(self) -> None:
        if self.base_rate <= 0:
            raise ValueError("base_rate must be > 0")
        if self.steepness < 0:
            raise ValueError("steepness must be >= 0")
        if not 0 < self.arming_threshold <= 1:
            raise ValueError("arming_threshold must be in (0, 1]")

    def rates(self, flows: np.ndarray, limits: np.ndarray) -> np.ndarray:
        loading = np.abs(flows) / np.maximum(limits, _ZERO_LIMIT)
        exponent = np.minimum(self.steepness * (loading - 1.0), _RATE_EXP_CAP)
        armed = loading > self.arming_threshold
        return np.where(armed, self.base_rate * np.exp(exponent), 0.0)


def line_rate(flow: float, limit: float, model: RateModel) -> float:
    """Failure rate of a single line; zero below the arming threshold."""
    if limit <= 0:
        raise ValueError("limit must be > 0")
    return float(model.rates(np.array([flow]), np.array([limit]))[0])


@dataclass(frozen=True)
class CascadeTrace:
    initial_pair: tuple[int, int]
    events: tuple[tuple[float, int], ...]  # (time in seconds, line id)
    termination: str  # no_armed_lines | time_cap | islands_exhausted | singular_system
    total_shed: float
    failed_count: int
    islanded_initially: bool


@dataclass(frozen=True)
class SeverityEstimate:
    mean_failures: float
    std_error: float
    num_simulations: int
    summaries: tuple[dict, ...]  # one light record per simulated cascade


def sample_initial_contingency(rng: np.random.Generator, num_lines: int) -> tuple[int, int]:
    """Uniform unordered pair of distinct line ids, returned ascending."""
    if num_lines < 2:
        raise ValueError("need at least two lines for an initial contingency")
    a = int(rng.integers(num_lines))
    b = int(rng.integers(num_lines - 1))
    if b >= a:
        b += 1
    return (a, b) if a < b else (b, a)


def simulate_cascade(
    network: Network,
    effective_limits: np.ndarray,
    initial_pair: tuple[int, int],
    model: RateModel,
    rng: np.random.Generator,
    t_max: float = DEFAULT_T_MAX,
    equilibrium: DispatchState | None = None,
) -> CascadeTrace:
    """Run one cascade from a two-line initial contingency.

    Loop: re-island, rebalance generation against the pre-outage dispatch,
    re-solve DC flows, then either stop (nothing armed, no lines left, or
    past t_max) or trip the armed line with the smallest sampled
    exponential waiting time (ties to the lowest line id).
    """
    if t_max <= 0:
        raise ValueError("t_max must be > 0")
    if equilibrium is None:
        from .powerflow import solve_equilibrium

        equilibrium = solve_equilibrium(network)
    arrays = network_arrays(network)
    limits = np.asarray(effective_limits, dtype=float)
    if limits.shape != (arrays.num_lines,):
        raise ValueError("effective_limits must have one entry per line")

    a, b = int(initial_pair[0]), int(initial_pair[1])
    if a == b or not (arrays.in_service[a] and arrays.in_service[b]):
        raise ValueError(f"initial pair {initial_pair} must be two distinct in-service lines")
    outaged = {a, b}
    pair = (a, b) if a < b else (b, a)

    alive_mask = arrays.in_service.copy()
    alive_mask[[a, b]] = False

    t = 0.0
    events: list[tuple[float, int]] = []
    total_shed = 0.0
    islanded_initially = False
    termination = "time_cap"
    first_step = True
    while True:
        partition = island_partition(network, outaged)
        injection = rebalance(network, partition, equilibrium)
        total_shed = injection.total_shed
        if first_step:
            islanded_initially = len(partition.components) > 1
            first_step = False
        alive = np.flatnonzero(alive_mask)
        if alive.size == 0:
            termination = "islands_exhausted"
            break
        try:
            _, flows = dc_power_flow(network, outaged, injection, partition)
        except SingularSystem:
            termination = "singular_system"
            break
        rates = model.rates(flows[alive], limits[alive])
        armed = rates > 0
        if not armed.any():
            termination = "no_armed_lines"
            break
        waits = rng.exponential(1.0 / rates[armed])
        k = int(np.argmin(waits))  # first minimum, so ties go to the lowest line id
        t_next = t + float(waits[k])
        if t_next > t_max:
            termination = "time_cap"
            break
        t = max(t_next, np.nextafter(t, np.inf))  # keep event times strictly increasing
        line = int(alive[armed][k])
        outaged.add(line)
        alive_mask[line] = False
        events.append((t, line))

    return CascadeTrace(
        initial_pair=pair,
        events=tuple(events),
        termination=termination,
        total_shed=total_shed,
        failed_count=2 + len(events),
        islanded_initially=islanded_initially,
    )


def _seed_entropy(master_seed) -> tuple[int, ...]:
    if isinstance(master_seed, (tuple, list)):
        return tuple(int(v) for v in master_seed)
    return (int(master_seed),)


def simulation_rng(master_seed, index: int) -> np.random.Generator:
    """Private stream for simulation `index`: depends only on (master_seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(_seed_entropy(master_seed) + (index,)))


def _trace_summary(trace: CascadeTrace) -> dict:
    return {
        "failed_count": trace.failed_count,
        "total_shed": trace.total_shed,
        "termination": trace.termination,
        "initial_pair": list(trace.initial_pair),
        "num_events": len(trace.events),
        "islanded_initially": trace.islanded_initially,
    }


def _severity_chunk(payload) -> list:
    network, limits, equilibrium, model, t_max, master_seed, indices, keep_traces = payload
    out = []
    for j in indices:
        rng = simulation_rng(master_seed, j)
        pair = sample_initial_contingency(rng, network.num_lines)
        trace = simulate_cascade(network, limits, pair, model, rng, t_max, equilibrium)
        out.append((j, _trace_summary(trace), trace if keep_traces else None))
    return out


def estimate_severity(
    network: Network,
    x,
    equilibrium: DispatchState,
    model: RateModel,
    num_simulations: int = 200,
    master_seed=0,
    t_max: float = DEFAULT_T_MAX,
    workers: int = 1,
    keep_traces: bool = False,
) -> SeverityEstimate | tuple[SeverityEstimate, list[CascadeTrace]]:
    """Mean and standard error of the failure count over independent cascades.

    Simulation `j` draws everything from a stream derived from
    (master_seed, j), so the estimate is bitwise identical for any worker
    count and any scheduling order.
    """
    if num_simulations < 1:
        raise ValueError("num_simulations must be >= 1")
    arrays = network_arrays(network)
    x_arr = check_tightening(x, arrays.num_lines)
    limits = tighten_limits(x_arr, equilibrium.flows, arrays.rating)

    indices = list(range(num_simulations))
    rows: list = [None] * num_simulations
    if workers <= 1:
        payload = (network, limits, equilibrium, model, t_max, master_seed, indices, keep_traces)
        for j, summary, trace in _severity_chunk(payload):
            rows[j] = (summary, trace)
    else:
        chunks = [indices[k::workers] for k in range(workers)]
        payloads = [
            (network, limits, equilibrium, model, t_max, master_seed, chunk, keep_traces)
            for chunk in chunks
            if chunk
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk_result in pool.map(_severity_chunk, payloads):
                for j, summary, trace in chunk_result:
                    rows[j] = (summary, trace)

    counts = [rows[j][0]["failed_count"] for j in range(num_simulations)]
    total = sum(counts)
    mean = total / num_simulations
    if num_simulations > 1:
        sumsq = sum(c * c for c in counts)
        var = (sumsq - total * total / num_simulations) / (num_simulations - 1)
        std_error = (max(var, 0.0) / num_simulations) ** 0.5
    else:
        std_error = 0.0
    estimate = SeverityEstimate(
        mean_failures=mean,
        std_error=std_error,
        num_simulations=num_simulations,
        summaries=tuple(rows[j][0] for j in range(num_simulations)),
    )
    if keep_traces:
        return estimate, [rows[j][1] for j in range(num_simulations)]
    return estimate


def failure_order_matrix(traces: list[CascadeTrace], num_lines: int) -> np.ndarray:
    """Counts of (line id, failure position); initial pairs occupy positions 1-2."""
    matrix = np.zeros((num_lines, num_lines), dtype=int)
    for trace in traces:
        lo, hi = trace.initial_pair
        matrix[lo, 0] += 1
        matrix[hi, 1] += 1
        for pos, (_, line) in enumerate(trace.events, start=2):
            matrix[line, pos] += 1
    return matrix
