"""Aggregation of session outcomes into experiment and bug-study reports.

Reports are pure functions of outcomes (hence of stored trajectories plus the
token ledger): replaying a run's trajectory files reproduces its report
byte-for-byte. Exports are canonical: sorted keys, 4-decimal rounding, "\n"
line endings.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .corpus import (
    BugPair,
    MutantSpec,
    TaskSpec,
    TestInput,
    canonical_dumps,
    materialize_expected_outputs,
)
from .errors import InfrastructureError, InvalidPairError, InvalidTaskError
from .feedback import Candidate, FeedbackEngine
from .session import StrategyConfig, run_session

REPORT_SCHEMA_VERSION = 1

CSV_HEADER = [
    "task_id",
    "mode",
    "tau",
    "mu",
    "correct",
    "completeness",
    "attempts",
    "submissions",
    "tokens_in",
    "tokens_out",
]

# Aggregation conventions that follow from design decisions, echoed in exports.
NOTE_INCORRECT_AS_ZERO = "tasks without a correct final candidate count as completeness 0"
NOTE_ZERO_SUBMISSIONS = "outcomes with zero submissions contribute 0 to the efficiency score"


@dataclass(frozen=True)
class ExperimentReport:
    config: StrategyConfig
    model_name: str
    n_tasks: int
    correctness_rate: float
    completeness_mean: float
    attempts_stats: dict
    submissions_stats: dict
    efficiency: float
    tokens_in_total: int
    tokens_out_total: int
    cost_total: float
    rows: tuple[dict, ...]
    notes: tuple[str, ...]


@dataclass(frozen=True)
class BugReport:
    config: StrategyConfig
    model_name: str
    n_pairs: int
    n_evaluated: int
    correctness_rate: float
    discrimination_rate: float
    rows: tuple[dict, ...]
    notes: tuple[str, ...]


def efficiency_score(outcomes) -> float:
    """Mean over outcomes of final completeness divided by submissions used."""
    if not outcomes:
        raise ValueError("efficiency score is undefined for an empty outcome list")
    total = 0.0
    for outcome in outcomes:
        if outcome.submissions_used > 0:
            total += outcome.final_score / outcome.submissions_used
    return total / len(outcomes)


def _stats(values) -> dict:
    values = list(values)
    if not values:
        return {"mean": 0.0, "min": 0, "max": 0}
    return {"mean": sum(values) / len(values), "min": min(values), "max": max(values)}


def aggregate(outcomes, token_ledger: dict | None = None, model_name: str = "") -> ExperimentReport:
    """Fold one configuration's outcomes into the report quantities."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("cannot aggregate an empty outcome list")
    configs = {(o.config.mode, o.config.tau, o.config.mu) for o in outcomes}
    if len(configs) > 1:
        raise ValueError(f"outcomes mix configurations: {sorted(configs)}")
    config = outcomes[0].config

    if token_ledger is None:
        token_ledger = {
            "tokens_in": sum(o.tokens_in for o in outcomes),
            "tokens_out": sum(o.tokens_out for o in outcomes),
            "cost": 0.0,
        }

    notes = [NOTE_INCORRECT_AS_ZERO]
    if any(o.submissions_used == 0 for o in outcomes):
        notes.append(NOTE_ZERO_SUBMISSIONS)

    rows = tuple(
        {
            "task_id": o.task_id,
            "mode": o.config.mode,
            "tau": o.config.tau,
            "mu": o.config.mu,
            "correct": o.correct,
            "completeness": o.final_score,
            "attempts": o.attempts_used,
            "submissions": o.submissions_used,
            "tokens_in": o.tokens_in,
            "tokens_out": o.tokens_out,
        }
        for o in sorted(outcomes, key=lambda o: o.task_id)
    )
    return ExperimentReport(
        config=config,
        model_name=model_name,
        n_tasks=len(outcomes),
        correctness_rate=sum(1 for o in outcomes if o.correct) / len(outcomes),
        completeness_mean=sum(o.final_score for o in outcomes) / len(outcomes),
        attempts_stats=_stats(o.attempts_used for o in outcomes),
        submissions_stats=_stats(o.submissions_used for o in outcomes),
        efficiency=efficiency_score(outcomes),
        tokens_in_total=int(token_ledger["tokens_in"]),
        tokens_out_total=int(token_ledger["tokens_out"]),
        cost_total=float(token_ledger["cost"]),
        rows=rows,
        notes=tuple(notes),
    )


def _round4(value):
    if isinstance(value, float):
        return round(value, 4)
    if isinstance(value, dict):
        return {k: _round4(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round4(v) for v in value]
    return value


def report_to_dict(report: ExperimentReport) -> dict:
    n = report.n_tasks
    return _round4(
        {
            "report_schema": REPORT_SCHEMA_VERSION,
            "kind": "experiment",
            "config": {
                "mode": report.config.mode,
                "tau": report.config.tau,
                "mu": report.config.mu,
                "feedback_mode": report.config.feedback_mode,
                "escalate_extra_attempts": report.config.escalate_extra_attempts,
                "seed": report.config.seed,
                "model": report.model_name,
            },
            "n_tasks": n,
            "correctness_rate": report.correctness_rate,
            "completeness_mean": report.completeness_mean,
            "attempts_stats": report.attempts_stats,
            "submissions_stats": report.submissions_stats,
            "efficiency": report.efficiency,
            "tokens": {
                "in_total": report.tokens_in_total,
                "out_total": report.tokens_out_total,
                "in_mean_per_task": report.tokens_in_total / n,
                "out_mean_per_task": report.tokens_out_total / n,
            },
            "cost_total": report.cost_total,
            "notes": list(report.notes),
            "tasks": list(report.rows),
        }
    )


def bug_report_to_dict(report: BugReport) -> dict:
    return _round4(
        {
            "report_schema": REPORT_SCHEMA_VERSION,
            "kind": "bug_study",
            "config": {
                "mode": report.config.mode,
                "tau": report.config.tau,
                "mu": report.config.mu,
                "feedback_mode": report.config.feedback_mode,
                "escalate_extra_attempts": report.config.escalate_extra_attempts,
                "seed": report.config.seed,
                "model": report.model_name,
            },
            "n_pairs": report.n_pairs,
            "n_evaluated": report.n_evaluated,
            "correctness_rate": report.correctness_rate,
            "discrimination_rate": report.discrimination_rate,
            "notes": list(report.notes),
            "pairs": list(report.rows),
        }
    )


def _csv_text(report: ExperimentReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in report.rows:
        writer.writerow(
            [
                row["task_id"],
                row["mode"],
                f"{row['tau']:.4f}",
                row["mu"],
                "true" if row["correct"] else "false",
                f"{row['completeness']:.4f}",
                row["attempts"],
                row["submissions"],
                row["tokens_in"],
                row["tokens_out"],
            ]
        )
    return buffer.getvalue()


def _text_summary(report: ExperimentReport) -> str:
    lines = [
        "experiment report",
        f"  mode={report.config.mode} tau={report.config.tau:.4f} mu={report.config.mu} "
        f"feedback={report.config.feedback_mode} model={report.model_name or '-'}",
        f"  tasks: {report.n_tasks}",
        f"  correctness rate: {report.correctness_rate:.4f}",
        f"  completeness mean: {report.completeness_mean:.4f}",
        f"  attempts: mean {report.attempts_stats['mean']:.4f} "
        f"min {report.attempts_stats['min']} max {report.attempts_stats['max']}",
        f"  submissions: mean {report.submissions_stats['mean']:.4f} "
        f"min {report.submissions_stats['min']} max {report.submissions_stats['max']}",
        f"  efficiency: {report.efficiency:.4f}",
        f"  tokens: in {report.tokens_in_total} out {report.tokens_out_total}",
        f"  cost total: {report.cost_total:.4f}",
    ]
    for note in report.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines) + "\n"


def export(report, path, fmt: str = "json") -> None:
    """Write a report in canonical form; re-exporting is byte-identical."""
    if fmt == "json":
        if isinstance(report, BugReport):
            text = canonical_dumps(bug_report_to_dict(report))
        else:
            text = canonical_dumps(report_to_dict(report))
    elif fmt == "csv":
        text = _csv_text(report)
    elif fmt == "text":
        text = _text_summary(report)
    else:
        raise ValueError(f"unknown export format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _pair_task(pair: BugPair) -> TaskSpec:
    """View a bug pair as a task: the correct version is the reference, its
    regression+trigger tests are the suite, the buggy version is the single
    mutant."""
    import ast

    fn = ast.parse(pair.correct_impl).body[0]
    signature = f"def {pair.function_name}({ast.unparse(fn.args)}):"
    tests = list(pair.regression_tests) + list(pair.trigger_tests)
    return TaskSpec(
        task_id=pair.pair_id,
        function_name=pair.function_name,
        signature=signature,
        docstring=None,
        implementation=pair.correct_impl,
        test_inputs=tuple(
            TestInput(input_id=t.input_id, args=t.args) for t in tests
        ),
        mutants=(MutantSpec(mutant_id="buggy", implementation=pair.buggy_impl),),
    )


def bug_study(pairs, config: StrategyConfig, backend_factory, pool, model_name: str = "") -> BugReport:
    """Generate a postcondition against each pair's correct implementation and
    apply the two-clause discrimination check to the final candidate."""
    pairs = list(pairs)
    rows = []
    n_correct = 0
    n_discriminating = 0
    n_evaluated = 0
    for pair in pairs:
        task = _pair_task(pair)
        engine = FeedbackEngine(pool, seed=derive_seed(config.seed, pair.pair_id))
        try:
            materialize_expected_outputs(task, pool)
            outcome = run_session(task, config, backend_factory(), engine)
        except (InvalidTaskError, InvalidPairError) as exc:
            rows.append({"pair_id": pair.pair_id, "skipped": True, "reason": str(exc)})
            continue
        except InfrastructureError:
            raise
        n_evaluated += 1
        if outcome.final_candidate is None:
            rows.append(
                {
                    "pair_id": pair.pair_id,
                    "skipped": False,
                    "correct": False,
                    "discriminating": False,
                    "detail": [],
                }
            )
            continue
        candidate = Candidate(source=outcome.final_candidate, attempt_index=1, action="submit")
        try:
            discriminating, detail = engine.is_bug_discriminating(candidate, pair)
        except InvalidPairError as exc:
            rows.append({"pair_id": pair.pair_id, "skipped": True, "reason": str(exc)})
            n_evaluated -= 1
            continue
        correct = outcome.correct
        n_correct += 1 if correct else 0
        n_discriminating += 1 if discriminating else 0
        rows.append(
            {
                "pair_id": pair.pair_id,
                "skipped": False,
                "correct": correct,
                "discriminating": discriminating,
                "detail": detail,
            }
        )
    notes = []
    skipped = sum(1 for r in rows if r.get("skipped"))
    if skipped:
        notes.append(f"{skipped} pair(s) skipped as invalid")
    return BugReport(
        config=config,
        model_name=model_name,
        n_pairs=len(pairs),
        n_evaluated=n_evaluated,
        correctness_rate=(n_correct / n_evaluated) if n_evaluated else 0.0,
        discrimination_rate=(n_discriminating / n_evaluated) if n_evaluated else 0.0,
        rows=tuple(sorted(rows, key=lambda r: r["pair_id"])),
        notes=tuple(notes),
    )


def derive_seed(seed: int, key: str) -> int:
    """Stable per-task seed so parallel sessions cannot reorder RNG draws."""
    import zlib

    return (seed * 1_000_003 + zlib.crc32(key.encode("utf-8"))) & 0x7FFFFFFF
