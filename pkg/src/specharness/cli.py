"""Command-line entry point wiring corpus, strategies, backends and reports.

Subcommands: gen (run a strategy over a task corpus), bugdetect (bug-pair
study), replay (recompute a report from stored trajectories, no backend
calls), validate-corpus, report (re-render a stored report).

tau is accepted as a percentage (0-100) and normalized internally to [0, 1].
Every run writes a manifest sufficient to reproduce it; with a scripted
backend and a fixed seed, reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import random
import shlex
import sys
from pathlib import Path

from . import __version__
from .corpus import canonical_dumps, load_bugpair_corpus, load_corpus, materialize_expected_outputs
from .errors import InvalidTaskError, SpecHarnessError
from .execpool import PROTO_VERSION, RunnerPoolConfig, default_runner_command, start_pool
from .feedback import OBSERVATION_TEMPLATE_VERSION, FeedbackEngine
from .llm import BackendConfig, ScriptedBackend, default_temperature, load_script, make_backend
from .report import (
    REPORT_SCHEMA_VERSION,
    aggregate,
    bug_study,
    derive_seed,
    export,
    report_to_dict,
)
from .session import (
    StrategyConfig,
    export_trajectory,
    load_trajectory,
    outcome_from_trajectory,
    run_session,
)

MANIFEST_SCHEMA_VERSION = 1


def _add_strategy_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--mode", choices=("exploratory", "greedy", "random_sampling"), required=True)
    parser.add_argument("--tau", type=float, required=True, help="completeness threshold, percent 0-100")
    parser.add_argument("--mu", type=int, required=True, help="attempt budget")
    parser.add_argument("--feedback", choices=("binary", "enhanced"), default="binary")
    parser.add_argument("--escalate-extra-attempts", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)


def _add_backend_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--backend", choices=("scripted", "remote"), required=True)
    parser.add_argument("--script", help="JSON file with an ordered list of turn strings")
    parser.add_argument("--endpoint", default="")
    parser.add_argument("--model", default="")
    parser.add_argument("--temperature", type=float, default=None)
    parser.add_argument("--max-output-tokens", type=int, default=1024)
    parser.add_argument("--price-in", type=float, default=0.0, help="price per input token")
    parser.add_argument("--price-out", type=float, default=0.0, help="price per output token")


def _add_pool_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--pool-size", type=int, default=1)
    parser.add_argument("--timeout-ms", type=int, default=1000)
    parser.add_argument("--runner-cmd", default="", help="override the runner launch command")
    parser.add_argument("--jobs", type=int, default=1, help="task-level parallelism")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specharness")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="run a strategy over a task corpus")
    gen.add_argument("--corpus", required=True)
    gen.add_argument("--out-dir", required=True)
    _add_strategy_flags(gen)
    _add_backend_flags(gen)
    _add_pool_flags(gen)

    bug = sub.add_parser("bugdetect", help="run the bug-discrimination study")
    bug.add_argument("--pairs", required=True)
    bug.add_argument("--out-dir", required=True)
    _add_strategy_flags(bug)
    _add_backend_flags(bug)
    _add_pool_flags(bug)

    replay = sub.add_parser("replay", help="recompute a report from stored trajectories")
    replay.add_argument("--run-dir", required=True)
    replay.add_argument("--price-in", type=float, default=None)
    replay.add_argument("--price-out", type=float, default=None)
    replay.add_argument("--out", default="")

    validate = sub.add_parser("validate-corpus", help="check a corpus loads and materializes")
    validate.add_argument("--corpus", required=True)
    validate.add_argument("--pool-size", type=int, default=1)
    validate.add_argument("--timeout-ms", type=int, default=1000)
    validate.add_argument("--runner-cmd", default="")

    render = sub.add_parser("report", help="re-render a stored report.json")
    render.add_argument("--run-dir", required=True)
    render.add_argument("--format", choices=("json", "csv", "text"), default="text")
    render.add_argument("--out", default="")
    return parser


def _normalize_tau(percent: float) -> float:
    if not 0.0 <= percent <= 100.0:
        raise SystemExit(f"error: --tau must lie in [0, 100], got {percent}")
    return percent / 100.0


def _strategy_config(args) -> StrategyConfig:
    return StrategyConfig(
        mode=args.mode,
        tau=_normalize_tau(args.tau),
        mu=args.mu,
        feedback_mode=args.feedback,
        escalate_extra_attempts=args.escalate_extra_attempts,
        seed=args.seed,
    )


def _backend_config(args) -> BackendConfig:
    script = None
    if args.backend == "scripted":
        if not args.script:
            raise SystemExit("error: --backend scripted requires --script")
        try:
            script = tuple(load_script(args.script))
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            raise SystemExit(f"error: cannot load script {args.script}: {exc}")
    temperature = args.temperature
    if temperature is None:
        temperature = default_temperature(args.mode)
    return BackendConfig(
        kind=args.backend,
        endpoint=args.endpoint,
        model_name=args.model,
        temperature=temperature,
        max_output_tokens=args.max_output_tokens,
        price_per_input_token=args.price_in,
        price_per_output_token=args.price_out,
        script=script,
    )


def _pool_config(args) -> RunnerPoolConfig:
    command = shlex.split(args.runner_cmd) if args.runner_cmd else default_runner_command()
    return RunnerPoolConfig(
        runner_launch_command=command,
        pool_size=args.pool_size,
        default_timeout_ms=args.timeout_ms,
    )


def _backend_factory(backend_config: BackendConfig):
    """Scripted backends hold a per-session cursor: one fresh instance per task."""
    if backend_config.kind == "scripted":
        return lambda: ScriptedBackend(backend_config.script, backend_id=backend_config.model_name or "scripted")
    shared = make_backend(backend_config)
    return lambda: shared


def _manifest(args, command: str, config: StrategyConfig, backend_config: BackendConfig, extra: dict) -> dict:
    manifest = {
        "manifest_schema": MANIFEST_SCHEMA_VERSION,
        "command": command,
        "config": {
            "mode": config.mode,
            "tau": config.tau,
            "mu": config.mu,
            "feedback_mode": config.feedback_mode,
            "escalate_extra_attempts": config.escalate_extra_attempts,
            "seed": config.seed,
        },
        "backend": {
            "kind": backend_config.kind,
            "model": backend_config.model_name,
            "endpoint": backend_config.endpoint,
            "temperature": backend_config.temperature,
            "max_output_tokens": backend_config.max_output_tokens,
            "price_per_input_token": backend_config.price_per_input_token,
            "price_per_output_token": backend_config.price_per_output_token,
        },
        "pool": {"pool_size": args.pool_size, "timeout_ms": args.timeout_ms},
        "versions": {
            "package": __version__,
            "proto": PROTO_VERSION,
            "report_schema": REPORT_SCHEMA_VERSION,
            "observation_templates": OBSERVATION_TEMPLATE_VERSION,
        },
    }
    if backend_config.kind == "scripted" and args.script:
        digest = hashlib.sha256(Path(args.script).read_bytes()).hexdigest()
        manifest["backend"]["script_sha256"] = digest
    manifest.update(extra)
    return manifest


def _ledger_from_outcomes(outcomes, backend_config: BackendConfig) -> dict:
    tokens_in = sum(o.tokens_in for o in outcomes)
    tokens_out = sum(o.tokens_out for o in outcomes)
    return {
        "tokens_in": tokens_in,
        "tokens_out": tokens_out,
        "cost": tokens_in * backend_config.price_per_input_token
        + tokens_out * backend_config.price_per_output_token,
    }


def cmd_gen(args) -> int:
    config = _strategy_config(args)
    backend_config = _backend_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest, tasks = load_corpus(args.corpus)
    order = list(tasks)
    random.Random(config.seed).shuffle(order)
    factory = _backend_factory(backend_config)

    outcomes = []
    failures = []
    with start_pool(_pool_config(args)) as pool:
        def run_one(task):
            materialize_expected_outputs(task, pool)
            engine = FeedbackEngine(pool, seed=derive_seed(config.seed, task.task_id))
            return run_session(task, config, factory(), engine)

        if args.jobs > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as executor:
                futures = {executor.submit(run_one, task): task for task in order}
                for future in concurrent.futures.as_completed(futures):
                    task = futures[future]
                    try:
                        outcomes.append(future.result())
                    except (InvalidTaskError, SpecHarnessError) as exc:
                        failures.append({"task_id": task.task_id, "reason": str(exc)})
        else:
            for task in order:
                try:
                    outcomes.append(run_one(task))
                except (InvalidTaskError, SpecHarnessError) as exc:
                    failures.append({"task_id": task.task_id, "reason": str(exc)})

    for outcome in outcomes:
        export_trajectory(outcome, out_dir / "trajectories")
    failures.sort(key=lambda f: f["task_id"])

    status = 0
    if failures or any(o.termination_reason == "infrastructure_error" for o in outcomes):
        status = 1
    if outcomes:
        report = aggregate(outcomes, _ledger_from_outcomes(outcomes, backend_config), backend_config.model_name)
        export(report, out_dir / "report.json", "json")
        export(report, out_dir / "report.csv", "csv")
    manifest_dict = _manifest(
        args,
        "gen",
        config,
        backend_config,
        {"corpus_id": manifest.corpus_id, "n_tasks": len(tasks), "failures": failures},
    )
    (out_dir / "manifest.json").write_text(canonical_dumps(manifest_dict), encoding="utf-8")
    for failure in failures:
        print(f"task {failure['task_id']} failed: {failure['reason']}", file=sys.stderr)
    print(f"gen: {len(outcomes)} outcome(s), {len(failures)} failure(s) -> {out_dir}")
    return status


def cmd_bugdetect(args) -> int:
    config = _strategy_config(args)
    backend_config = _backend_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs = load_bugpair_corpus(args.pairs)
    factory = _backend_factory(backend_config)
    with start_pool(_pool_config(args)) as pool:
        report = bug_study(pairs, config, factory, pool, model_name=backend_config.model_name)

    export(report, out_dir / "bug_report.json", "json")
    manifest_dict = _manifest(args, "bugdetect", config, backend_config, {"n_pairs": len(pairs)})
    (out_dir / "manifest.json").write_text(canonical_dumps(manifest_dict), encoding="utf-8")
    print(
        f"bugdetect: {report.n_evaluated}/{report.n_pairs} pair(s) evaluated, "
        f"discrimination rate {report.discrimination_rate:.4f} -> {out_dir}"
    )
    return 0 if report.n_evaluated == report.n_pairs else 1


def cmd_replay(args) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.is_file():
        raise SystemExit(f"error: no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("manifest_schema") != MANIFEST_SCHEMA_VERSION:
        raise SystemExit("error: unsupported manifest schema")
    cfg = manifest["config"]
    config = StrategyConfig(
        mode=cfg["mode"],
        tau=cfg["tau"],
        mu=cfg["mu"],
        feedback_mode=cfg.get("feedback_mode", "binary"),
        escalate_extra_attempts=cfg.get("escalate_extra_attempts", 0),
        seed=cfg.get("seed", 0),
    )
    price_in = args.price_in if args.price_in is not None else manifest["backend"]["price_per_input_token"]
    price_out = args.price_out if args.price_out is not None else manifest["backend"]["price_per_output_token"]

    trajectory_dir = run_dir / "trajectories"
    suffix = f".{config.mode}.jsonl"
    outcomes = []
    for path in sorted(trajectory_dir.glob(f"*{suffix}")):
        task_id = path.name[: -len(suffix)]
        entries = load_trajectory(path)
        outcomes.append(outcome_from_trajectory(task_id, config, entries))
    if not outcomes:
        raise SystemExit(f"error: no trajectories under {trajectory_dir}")

    tokens_in = sum(o.tokens_in for o in outcomes)
    tokens_out = sum(o.tokens_out for o in outcomes)
    ledger = {
        "tokens_in": tokens_in,
        "tokens_out": tokens_out,
        "cost": tokens_in * price_in + tokens_out * price_out,
    }
    report = aggregate(outcomes, ledger, manifest["backend"].get("model", ""))
    text = canonical_dumps(report_to_dict(report))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate_corpus(args) -> int:
    manifest, tasks = load_corpus(args.corpus)
    command = shlex.split(args.runner_cmd) if args.runner_cmd else default_runner_command()
    pool_config = RunnerPoolConfig(
        runner_launch_command=command, pool_size=args.pool_size, default_timeout_ms=args.timeout_ms
    )
    all_valid = True
    with start_pool(pool_config) as pool:
        for task in tasks:
            try:
                materialize_expected_outputs(task, pool)
            except InvalidTaskError as exc:
                all_valid = False
                print(f"INVALID {task.task_id}: {exc}")
            else:
                print(f"OK      {task.task_id}")
    print(f"validate-corpus: {manifest.corpus_id}: {len(tasks)} task(s)")
    return 0 if all_valid else 1


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    report_path = run_dir / "report.json"
    if not report_path.is_file():
        raise SystemExit(f"error: no report.json under {run_dir}")
    data = json.loads(report_path.read_text(encoding="utf-8"))
    if data.get("report_schema") != REPORT_SCHEMA_VERSION:
        raise SystemExit("error: unsupported report schema")
    if args.format == "json":
        text = canonical_dumps(data)
    elif args.format == "csv":
        from .report import CSV_HEADER

        lines = [",".join(CSV_HEADER)]
        for row in data["tasks"]:
            lines.append(
                ",".join(
                    [
                        row["task_id"],
                        row["mode"],
                        f"{row['tau']:.4f}",
                        str(row["mu"]),
                        "true" if row["correct"] else "false",
                        f"{row['completeness']:.4f}",
                        str(row["attempts"]),
                        str(row["submissions"]),
                        str(row["tokens_in"]),
                        str(row["tokens_out"]),
                    ]
                )
            )
        text = "\n".join(lines) + "\n"
    else:
        cfg = data["config"]
        lines = [
            "experiment report",
            f"  mode={cfg['mode']} tau={cfg['tau']:.4f} mu={cfg['mu']} "
            f"feedback={cfg['feedback_mode']} model={cfg.get('model') or '-'}",
            f"  tasks: {data['n_tasks']}",
            f"  correctness rate: {data['correctness_rate']:.4f}",
            f"  completeness mean: {data['completeness_mean']:.4f}",
            f"  efficiency: {data['efficiency']:.4f}",
            f"  tokens: in {data['tokens']['in_total']} out {data['tokens']['out_total']}",
            f"  cost total: {data['cost_total']:.4f}",
        ]
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "bugdetect": cmd_bugdetect,
    "replay": cmd_replay,
    "validate-corpus": cmd_validate_corpus,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SpecHarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
