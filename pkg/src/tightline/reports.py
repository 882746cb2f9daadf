"""File outputs: records, severity artifacts, manifests, and comparison reports.

Every delimited output carries a header row with a fixed column order.
Records files are canonical (reproducible byte-for-byte for the same
inputs and seed); measured timings go to a separate timings.csv, and the
run manifest is the single timestamped artifact.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .campaign import MODES, CampaignConfig, CampaignResult, EvaluationRecord
from .cascade import CascadeTrace, SeverityEstimate, failure_order_matrix
from .figures import save_bar, save_failure_histogram, save_failure_order, save_progression

NONZERO_THRESHOLD = 1e-3
_INTEGRITY_TOL = 1e-12

SUBSTITUTIONS = (
    "equilibrium dispatch: DC optimal power flow (linear) in place of an AC formulation",
    "dispatch LP solver: scipy.optimize.linprog (HiGHS), piecewise-linear quadratic costs",
    "cascade failure rates: declared overload-exponential model rate = base*exp(steepness*(u-1)) for u above the arming threshold",
    "constrained acquisition maximizer: log-barrier interior method with projected quasi-Newton inner solves",
)


class IntegrityError(RuntimeError):
    """Stored record fields disagree with values recomputed from the record."""


def write_manifest(out_dir: Path, config_doc: dict | None, case_text: str | None, extra: dict | None = None) -> Path:
    doc = {
        "tool": "tightline",
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "case_sha256": hashlib.sha256(case_text.encode()).hexdigest() if case_text else None,
        "config": config_doc,
        "substitutions": list(SUBSTITUTIONS),
        "notes": {"load_scaling": "nominal case-file loads"},
    }
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


def _dump_json(value) -> str:
    return json.dumps(value, separators=(", ", ": "))


def write_equilibrium_output(out_dir: Path, network, dispatch) -> Path:
    ratings = [ln.rating for ln in network.lines]
    doc = {
        "base_mva": network.base_mva,
        "objective_cost": dispatch.objective_cost,
        "generation": [float(v) for v in dispatch.generation],
        "angles": [float(v) for v in dispatch.angles],
        "flows": [
            {
                "line": ln.id,
                "from_bus": ln.from_bus,
                "to_bus": ln.to_bus,
                "flow": float(dispatch.flows[ln.id]),
                "limit": float(ratings[ln.id]),
                "margin": float(ratings[ln.id] - abs(dispatch.flows[ln.id])),
            }
            for ln in network.lines
        ],
    }
    path = out_dir / "equilibrium.json"
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


def write_severity_outputs(
    out_dir: Path,
    estimate: SeverityEstimate,
    traces: list[CascadeTrace],
    num_lines: int,
    label: str = "",
) -> None:
    (out_dir / "severity.json").write_text(
        json.dumps(
            {
                "mean_failures": estimate.mean_failures,
                "std_error": estimate.std_error,
                "num_simulations": estimate.num_simulations,
                "summaries": list(estimate.summaries),
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    with (out_dir / "traces.jsonl").open("w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(
                _dump_json(
                    {
                        "initial_pair": list(trace.initial_pair),
                        "events": [[t, line] for t, line in trace.events],
                        "termination": trace.termination,
                        "total_shed": trace.total_shed,
                        "failed_count": trace.failed_count,
                        "islanded_initially": trace.islanded_initially,
                    }
                )
                + "\n"
            )

    counts = [trace.failed_count for trace in traces]
    hist_values, hist_edges = np.histogram(counts, bins=np.arange(1.5, num_lines + 1.5))
    with (out_dir / "failure_histogram.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["failed_count", "cascades"])
        for edge, value in zip(hist_edges[:-1], hist_values):
            writer.writerow([int(edge + 0.5), int(value)])

    matrix = failure_order_matrix(traces, num_lines)
    with (out_dir / "failure_order.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line_id"] + [f"position_{p + 1}" for p in range(num_lines)])
        for line_id in range(num_lines):
            writer.writerow([line_id] + matrix[line_id].tolist())

    save_failure_histogram(counts, out_dir / "failure_histogram.png", title=label)
    save_failure_order(matrix, out_dir / "failure_order.png", title=label)


def write_campaign_outputs(out_dir: Path, result: CampaignResult, case_text: str | None) -> None:
    records_path = out_dir / "records.jsonl"
    with records_path.open("w", encoding="utf-8") as fh:
        for record in result.records:
            fh.write(_dump_json(record.to_canonical_dict()) + "\n")

    with (out_dir / "timings.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "wall_time_s"])
        for record in result.records:
            writer.writerow([record.index, f"{record.wall_time:.6f}"])

    with (out_dir / "progression.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "phase", "raw_objective", "transformed_objective", "l1_norm", "feasible"])
        for r in result.records:
            writer.writerow([r.index, r.phase, repr(r.raw_objective), repr(r.transformed_objective), repr(r.l1_norm), int(r.feasible)])

    (out_dir / "best_attack.json").write_text(json.dumps(result.best, indent=2), encoding="utf-8")
    write_manifest(out_dir, result.config.to_dict(), case_text)
    rows = [r.to_canonical_dict() for r in result.records]
    if rows:
        save_progression(rows, out_dir / "progression.png", title=_experiment_label(result.config.to_dict()))


def _experiment_label(config_doc: dict | None) -> str:
    if not config_doc:
        return "unknown"
    mode = config_doc.get("mode", "unknown")
    if mode == "pobo":
        return f"pobo rho={config_doc.get('penalty_rho')}"
    return mode


@dataclass
class LoadedRun:
    path: Path
    records: list[EvaluationRecord]
    config_doc: dict | None
    timings: dict[int, float]

    @property
    def label(self) -> str:
        return _experiment_label(self.config_doc)


def load_run(records_path: str | Path) -> LoadedRun:
    path = Path(records_path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(EvaluationRecord.from_dict(json.loads(line)))
    config_doc = None
    manifest_path = path.parent / "manifest.json"
    if manifest_path.exists():
        config_doc = json.loads(manifest_path.read_text(encoding="utf-8")).get("config")
    timings: dict[int, float] = {}
    timings_path = path.parent / "timings.csv"
    if timings_path.exists():
        with timings_path.open(encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                timings[int(row["index"])] = float(row["wall_time_s"])
    return LoadedRun(path=path, records=records, config_doc=config_doc, timings=timings)


def check_integrity(run: LoadedRun) -> None:
    """Recompute derived record fields and fail loudly on any mismatch."""
    budget = run.config_doc.get("budget_lambda") if run.config_doc else None
    rho = run.config_doc.get("penalty_rho") if run.config_doc else None
    mode = run.config_doc.get("mode") if run.config_doc else None
    for record in run.records:
        l1 = float(np.sum(record.x))
        if abs(l1 - record.l1_norm) > _INTEGRITY_TOL:
            raise IntegrityError(
                f"{run.path}: record {record.index}: stored l1_norm {record.l1_norm!r} "
                f"!= recomputed {l1!r}"
            )
        if budget is not None:
            feasible = l1 <= budget + 1e-9
            if feasible != record.feasible:
                raise IntegrityError(
                    f"{run.path}: record {record.index}: stored feasible={record.feasible} "
                    f"disagrees with recomputed {feasible}"
                )
        if mode == "pobo" and rho is not None and budget is not None:
            expected = record.raw_objective + rho * min(budget - l1, 0.0)
            if abs(expected - record.transformed_objective) > _INTEGRITY_TOL:
                raise IntegrityError(
                    f"{run.path}: record {record.index}: stored transformed_objective "
                    f"{record.transformed_objective!r} != recomputed {expected!r}"
                )


def _phase_best(records: list[EvaluationRecord], phase: str) -> EvaluationRecord | None:
    rows = [r for r in records if r.phase == phase]
    if not rows:
        return None
    return max(rows, key=lambda r: (r.raw_objective, -r.index))


def _eligible(run: LoadedRun) -> list[EvaluationRecord]:
    mode = run.config_doc.get("mode") if run.config_doc else None
    if mode in ("cabo", "pobo", "feasible_random"):
        return [r for r in run.records if r.feasible]
    return list(run.records)


def _mode_rank(run: LoadedRun) -> tuple:
    mode = run.config_doc.get("mode") if run.config_doc else "unknown"
    rank = MODES.index(mode) if mode in MODES else len(MODES)
    rho = run.config_doc.get("penalty_rho") if run.config_doc else None
    return (rank, rho if rho is not None else 0.0, str(run.path))


def write_report(runs: list[LoadedRun], out_dir: Path) -> None:
    """Comparison table, sparsity counts, and wall-time summary across runs."""
    runs = sorted(runs, key=_mode_rank)
    header = ["experiment", "records", "init_best_l1", "init_best_f", "bo_best_l1", "bo_best_f"]
    table_rows: list[list[str]] = []
    nnz_rows: list[list] = []
    wall_rows: list[list] = []
    for run in runs:
        eligible = _eligible(run)
        init_best = _phase_best(eligible, "init")
        bo_best = _phase_best(eligible, "bo")
        table_rows.append(
            [
                run.label,
                str(len(run.records)),
                f"{init_best.l1_norm:.1f}" if init_best else "",
                f"{init_best.raw_objective:.1f}" if init_best else "",
                f"{bo_best.l1_norm:.1f}" if bo_best else "",
                f"{bo_best.raw_objective:.1f}" if bo_best else "",
            ]
        )
        overall = max(eligible, key=lambda r: (r.raw_objective, -r.index)) if eligible else None
        nnz = int(np.sum(overall.x > NONZERO_THRESHOLD)) if overall is not None else 0
        nnz_rows.append([run.label, overall.index if overall else "", nnz])
        times = [run.timings[r.index] for r in run.records if r.index in run.timings]
        wall_rows.append(
            [
                run.label,
                len(times),
                f"{float(np.mean(times)):.4f}" if times else "",
                f"{float(np.median(times)):.4f}" if times else "",
            ]
        )

    with (out_dir / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(table_rows)

    widths = [max(len(str(row[c])) for row in [header] + table_rows) for c in range(len(header))]
    lines = ["  ".join(str(cell).ljust(width) for cell, width in zip(row, widths)) for row in [header] + table_rows]
    (out_dir / "comparison.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with (out_dir / "nonzero_counts.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "best_index", "nonzero_components"])
        writer.writerows(nnz_rows)

    with (out_dir / "walltime_summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "evaluations_timed", "mean_wall_s", "median_wall_s"])
        writer.writerows(wall_rows)

    labels = [row[0] for row in nnz_rows]
    save_bar(labels, [row[2] for row in nnz_rows], "nonzero components of best attack", out_dir / "nonzero_counts.png")
    wall_means = [float(row[2]) if row[2] else 0.0 for row in wall_rows]
    save_bar(labels, wall_means, "mean wall time per evaluation (s)", out_dir / "walltime_summary.png")
    for run in runs:
        rows = [r.to_canonical_dict() for r in run.records]
        if rows:
            save_progression(rows, out_dir / f"progression_{_slug(run.label)}.png", title=run.label)


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label)
