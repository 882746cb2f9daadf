"""Attack-search campaigns: random baselines, BO variants, and bookkeeping.

Seed derivation gives schedule-independent reproducibility: with master
seed m, evaluation i draws its initial sample from stream (m, 1, i), its
cascade simulations from streams (m, 2, i, j), and its acquisition
restarts from stream (m, 3, i). Identical (config, master_seed) therefore
produce identical record sequences regardless of batch or worker
parallelism, and an interrupted campaign resumes exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import (
    OptimizerSettings,
    PenaltySettings,
    maximize_acquisition_box,
    maximize_acquisition_l1,
    penalize_observation,
)
from .attack import BudgetConstraint
from .cascade import RateModel, estimate_severity
from .gp import GpPosterior, KernelParams, fit, select_lengthscale
from .grid import Network
from .powerflow import solve_equilibrium

MODES = ("random", "unconstrained_bo", "cabo", "pobo", "feasible_random", "minimal", "maximal")
_BUDGET_MODES = ("cabo", "pobo", "feasible_random")
FEASIBILITY_SLACK = 1e-9


class ConfigError(ValueError):
    """The campaign configuration is invalid or incomplete."""


@dataclass(frozen=True)
class CampaignConfig:
    mode: str
    init_evals: int = 256
    bo_evals: int = 256
    batch_size: int = 12
    budget_lambda: float | None = None
    penalty_rho: float | None = None
    m_sims: int = 200
    master_seed: int = 0
    t_max: float = 1e5
    rate_base: float = 1e-3
    rate_steepness: float = 8.0
    rate_arming: float = 0.97
    workers: int = 1
    noise_variance: float = 0.5
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.init_evals < 0 or self.bo_evals < 0:
            raise ConfigError("init_evals and bo_evals must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.m_sims < 1:
            raise ConfigError("m_sims must be >= 1")
        if self.mode in _BUDGET_MODES and self.budget_lambda is None:
            raise ConfigError(f"mode {self.mode!r} requires budget_lambda")
        if self.mode == "pobo" and self.penalty_rho is None:
            raise ConfigError("mode 'pobo' requires penalty_rho")
        if self.budget_lambda is not None and self.budget_lambda <= 0:
            raise ConfigError("budget_lambda must be > 0")
        if self.penalty_rho is not None and self.penalty_rho <= 0:
            raise ConfigError("penalty_rho must be > 0")
        if self.mode in ("unconstrained_bo", "cabo", "pobo") and self.bo_evals > 0 and self.init_evals < 1:
            raise ConfigError("BO modes need at least one initial evaluation")

    def total_evals(self) -> int:
        if self.mode in ("minimal", "maximal"):
            return 1
        return self.init_evals + self.bo_evals

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("optimizer")
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CampaignConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "optimizer"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "mode" not in doc:
            raise ConfigError("config is missing required key 'mode'")
        cfg = cls(**doc)
        cfg.validate()
        return cfg


@dataclass
class EvaluationRecord:
    index: int
    phase: str  # "init" or "bo"
    x: np.ndarray
    raw_objective: float
    transformed_objective: float
    l1_norm: float
    feasible: bool
    seed: tuple
    wall_time: float
    mean_failures: float
    std_failures: float

    def to_canonical_dict(self) -> dict:
        """Record fields persisted in records files (volatile timing excluded)."""
        return {
            "index": self.index,
            "phase": self.phase,
            "x": [float(v) for v in self.x],
            "raw_objective": self.raw_objective,
            "transformed_objective": self.transformed_objective,
            "l1_norm": self.l1_norm,
            "feasible": self.feasible,
            "seed": list(self.seed),
            "mean_failures": self.mean_failures,
            "std_failures": self.std_failures,
        }

    @classmethod
    def from_dict(cls, doc: dict, wall_time: float = 0.0) -> "EvaluationRecord":
        return cls(
            index=doc["index"],
            phase=doc["phase"],
            x=np.asarray(doc["x"], dtype=float),
            raw_objective=doc["raw_objective"],
            transformed_objective=doc["transformed_objective"],
            l1_norm=doc["l1_norm"],
            feasible=doc["feasible"],
            seed=tuple(doc["seed"]),
            wall_time=doc.get("wall_time", wall_time),
            mean_failures=doc["mean_failures"],
            std_failures=doc["std_failures"],
        )


@dataclass
class CampaignResult:
    config: CampaignConfig
    records: list[EvaluationRecord]
    best: dict | None
    kernel_params: KernelParams | None
    interrupted: bool = False


def init_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, 1, index)))


def evaluation_seed(master_seed: int, index: int) -> tuple[int, int, int]:
    return (master_seed, 2, index)


def acquisition_seed(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, 3, index)))


def sample_feasible_random(rng: np.random.Generator, dim: int, budget: float) -> np.ndarray:
    """Uniform draw rescaled to sum to min(budget, dim), staying inside the box.

    Components pushed past 1 by the rescaling are clipped and their excess
    is redistributed proportionally over the unclipped components.
    """
    if budget <= 0:
        raise ValueError("budget must be > 0")
    if budget >= dim:
        return np.ones(dim)
    u = rng.random(dim)
    total = u.sum()
    if total <= 0:
        u = np.full(dim, 1.0 / dim)
        total = 1.0
    x = u * (budget / total)
    for _ in range(dim):
        over = x > 1.0
        if not over.any():
            break
        excess = float((x[over] - 1.0).sum())
        x[over] = 1.0
        free = x < 1.0
        if not free.any():
            break
        x[free] += excess * x[free] / float(x[free].sum())
    return np.clip(x, 0.0, 1.0)


def constant_liar_batch(gp: GpPosterior, best: float, batch_size: int, acquire) -> list[np.ndarray]:
    """Acquire a batch by repeatedly inserting the incumbent best as a fake observation.

    `acquire(gp, best, position)` proposes a point for the given batch
    position. Lies never leave this function; callers evaluate the
    returned points for real.
    """
    return _liar_points(gp, best, batch_size, acquire, known=[])


def _liar_points(gp: GpPosterior, best: float, batch_size: int, acquire, known: list[np.ndarray]) -> list[np.ndarray]:
    points: list[np.ndarray] = []
    current = gp
    for position in range(batch_size):
        if position < len(known):
            x = known[position]
        else:
            x = acquire(current, best, position)
        points.append(x)
        if position < batch_size - 1:
            current = fit(
                np.vstack([current.x_train, x[None, :]]),
                np.append(current.y_train, best),
                current.params,
            )
    return points


def _make_cascade_objective(config: CampaignConfig, network: Network):
    equilibrium = solve_equilibrium(network)
    model = RateModel(
        base_rate=config.rate_base,
        steepness=config.rate_steepness,
        arming_threshold=config.rate_arming,
    )

    def objective(x: np.ndarray, seed: tuple) -> tuple[float, float, float]:
        estimate = estimate_severity(
            network,
            x,
            equilibrium,
            model,
            num_simulations=config.m_sims,
            master_seed=seed,
            t_max=config.t_max,
            workers=config.workers,
        )
        return estimate.mean_failures, estimate.mean_failures, estimate.std_error

    return objective


def run_campaign(
    config: CampaignConfig,
    network: Network | None,
    objective=None,
    dim: int | None = None,
    checkpoint_path: str | Path | None = None,
    resume_records: list[EvaluationRecord] | None = None,
    should_stop=None,
) -> CampaignResult:
    """Run one campaign and return its evaluation records and best attack.

    The objective defaults to cascade severity on `network`; any callable
    `objective(x, seed) -> (objective_value, mean_failures, std_failures)`
    can replace it (the cascade simulator is one choice of black box, not
    a requirement of the search).
    """
    config.validate()
    if objective is None:
        if network is None:
            raise ConfigError("run_campaign needs a network unless an objective is injected")
        objective = _make_cascade_objective(config, network)
    if dim is None:
        if network is None:
            raise ConfigError("run_campaign needs dim when no network is given")
        dim = network.num_lines

    mode = config.mode
    master = config.master_seed
    budget = BudgetConstraint(config.budget_lambda) if config.budget_lambda is not None else None
    penalty = PenaltySettings(config.penalty_rho) if mode == "pobo" else None
    total = config.total_evals()

    records: list[EvaluationRecord] = list(resume_records or [])
    if len(records) > total:
        raise ConfigError(f"resume state has {len(records)} records but the campaign totals {total}")

    def persist() -> None:
        if checkpoint_path is not None:
            write_checkpoint(checkpoint_path, config, records)

    def evaluate(index: int, phase: str, x: np.ndarray) -> None:
        seed = evaluation_seed(master, index)
        start = time.perf_counter()
        raw, mean_failures, std_failures = objective(x, seed)
        wall = time.perf_counter() - start
        l1 = float(np.sum(x))
        feasible = bool(l1 <= budget.budget + FEASIBILITY_SLACK) if budget is not None else True
        transformed = penalize_observation(raw, x, budget, penalty) if penalty is not None else raw
        records.append(
            EvaluationRecord(
                index=index,
                phase=phase,
                x=np.asarray(x, dtype=float),
                raw_objective=float(raw),
                transformed_objective=float(transformed),
                l1_norm=l1,
                feasible=feasible,
                seed=seed,
                wall_time=wall,
                mean_failures=float(mean_failures),
                std_failures=float(std_failures),
            )
        )
        persist()

    def stopped() -> bool:
        return bool(should_stop and should_stop(len(records)))

    interrupted = False
    kernel_params: KernelParams | None = None

    if mode in ("minimal", "maximal"):
        if not records:
            x = np.zeros(dim) if mode == "minimal" else np.ones(dim)
            evaluate(0, "init", x)
    elif mode in ("random", "feasible_random"):
        for i in range(len(records), total):
            if stopped():
                interrupted = True
                break
            rng = init_rng(master, i)
            x = rng.random(dim) if mode == "random" else sample_feasible_random(rng, dim, budget.budget)
            evaluate(i, "init", x)
    else:
        # BO modes: random init phase, then constant-liar batches.
        init_n = config.init_evals
        for i in range(len(records), min(init_n, total)):
            if stopped():
                interrupted = True
                break
            evaluate(i, "init", init_rng(master, i).random(dim))

        if not interrupted and len(records) >= init_n and total > init_n:
            surrogate_y = _surrogate_values(records[:init_n])
            init_x = np.array([r.x for r in records[:init_n]])
            kernel_params = select_lengthscale(init_x, surrogate_y, config.noise_variance)

            while len(records) < total and not interrupted:
                if stopped():
                    interrupted = True
                    break
                batch_start = init_n + ((len(records) - init_n) // config.batch_size) * config.batch_size
                batch_end = min(batch_start + config.batch_size, total)
                history = records[:batch_start]
                x_all = np.array([r.x for r in history])
                y_all = _surrogate_values(history)
                gp = fit(x_all, y_all, kernel_params)
                best = float(np.max(y_all))

                def acquire(current_gp, current_best, position, _start=batch_start):
                    seed = acquisition_seed(master, _start + position)
                    if mode == "cabo":
                        return maximize_acquisition_l1(current_gp, current_best, budget, config.optimizer, seed)
                    return maximize_acquisition_box(current_gp, current_best, config.optimizer, seed)

                known = [r.x for r in records[batch_start:]]
                points = _liar_points(gp, best, batch_end - batch_start, acquire, known)
                for offset, x in enumerate(points):
                    index = batch_start + offset
                    if index < len(records):
                        continue
                    if stopped():
                        interrupted = True
                        break
                    evaluate(index, "bo", x)

    persist()
    return CampaignResult(
        config=config,
        records=records,
        best=summarize_best(config, records),
        kernel_params=kernel_params,
        interrupted=interrupted,
    )


def _surrogate_values(records: list[EvaluationRecord]) -> np.ndarray:
    return np.array([r.transformed_objective for r in records])


def _best_of(records: list[EvaluationRecord]) -> dict | None:
    if not records:
        return None
    best = max(records, key=lambda r: (r.raw_objective, -r.index))
    return {
        "index": best.index,
        "phase": best.phase,
        "raw_objective": best.raw_objective,
        "l1_norm": best.l1_norm,
        "x": [float(v) for v in best.x],
    }


def summarize_best(config: CampaignConfig, records: list[EvaluationRecord]) -> dict | None:
    """Best attack under the mode's feasibility rule, split by phase."""
    eligible = [r for r in records if r.feasible] if config.mode in _BUDGET_MODES else list(records)
    overall = _best_of(eligible)
    if overall is None:
        return None
    return {
        "mode": config.mode,
        **overall,
        "best_init": _best_of([r for r in eligible if r.phase == "init"]),
        "best_bo": _best_of([r for r in eligible if r.phase == "bo"]),
    }


def write_checkpoint(path: str | Path, config: CampaignConfig, records: list[EvaluationRecord]) -> None:
    doc = {
        "config": config.to_dict(),
        "records": [dict(r.to_canonical_dict(), wall_time=r.wall_time) for r in records],
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc), encoding="utf-8")
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> tuple[CampaignConfig, list[EvaluationRecord]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    config = CampaignConfig.from_dict(doc["config"])
    records = [EvaluationRecord.from_dict(r) for r in doc["records"]]
    return config, records
