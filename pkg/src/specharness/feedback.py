"""Candidate postcondition evaluation.

A candidate is correct when its assertion block completes cleanly on every
(test input, reference output) pair. A correct candidate's completeness is the
fraction of mutants it catches: a mutant is caught when, on at least one input
where it produced an output, the assertion evaluates to any non-ok status.
Mutants that never produce an output are excluded from the denominator.

Observation templates are fixed strings (versioned below) so that stored
trajectories stay reproducible across harness releases.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .corpus import TaskSpec, BugPair
from .errors import CompletenessUndefinedError, InvalidPairError

OBSERVATION_TEMPLATE_VERSION = 1

_OBS_TESTS_PASSED = "All {n} tests passed."
_OBS_TEST_FAILED = "Tests failed on input {input_id!r}: {detail}"
_OBS_TARGET_MET = "Completeness target reached."
_OBS_TARGET_NOT_MET = "Completeness target not reached."
_OBS_UNDEFINED = "Completeness is undefined for this task: no scorable mutants."
_OBS_PROBE_PASSED = "Probe assertion held on all {n} tests."
_OBS_PROBE_FAILED = "Probe assertion failed on input {input_id!r}: {detail}"
_OBS_REVEAL = (
    "One behavior your postcondition does not reject, mutant {mutant_id!r}:\n"
    "{source}\n"
    "Refine the postcondition so it fails on this implementation's outputs."
)

_FAILURE_DETAIL = {
    "assert_fail": "the assertion did not hold (assert_fail).",
    "syntax_error": "the assertion block failed to compile: {message} (syntax_error)",
    "runtime_error": "{error_type}: {message} (runtime_error)",
    "timeout": "evaluation timed out.",
    "unserializable_output": "the evaluation produced an unserializable value.",
}


def _failure_detail(status: str, error_type: str, message: str) -> str:
    template = _FAILURE_DETAIL.get(status, "{error_type}: {message}")
    return template.format(error_type=error_type, message=message)


@dataclass(frozen=True)
class Candidate:
    source: str
    attempt_index: int
    action: str  # "explore" | "submit"

    def __post_init__(self):
        if not self.source.strip():
            raise ValueError("candidate source must be non-empty")


@dataclass(frozen=True)
class CorrectnessReport:
    correct: bool
    failing_input_id: str | None = None
    failure_status: str | None = None
    failure_detail: str = ""
    n_tests: int = 0


@dataclass(frozen=True)
class CompletenessReport:
    score: float
    caught_mutant_ids: frozenset[str]
    uncaught_mutant_ids: frozenset[str]
    excluded_mutant_ids: frozenset[str]


@dataclass(frozen=True)
class Feedback:
    correctness: CorrectnessReport
    completeness: CompletenessReport | None
    score: float
    observation_text: str
    mode: str  # "binary" | "enhanced"
    revealed_mutant_id: str | None = None
    completeness_undefined: bool = False


def compose_observation(feedback: Feedback, tau: float, revealed_source: str | None = None) -> str:
    """Render the observation shown to the model.

    Binary mode carries only pass/fail and whether the target is met (plus the
    error text of a failing evaluation); enhanced mode additionally embeds one
    uncaught mutant's source.
    """
    report = feedback.correctness
    if not report.correct:
        return _OBS_TEST_FAILED.format(input_id=report.failing_input_id, detail=report.failure_detail)
    parts = [_OBS_TESTS_PASSED.format(n=report.n_tests)]
    if feedback.completeness_undefined:
        parts.append(_OBS_UNDEFINED)
    else:
        parts.append(_OBS_TARGET_MET if feedback.score >= tau else _OBS_TARGET_NOT_MET)
    if feedback.mode == "enhanced" and feedback.revealed_mutant_id is not None:
        parts.append(
            _OBS_REVEAL.format(mutant_id=feedback.revealed_mutant_id, source=revealed_source or "")
        )
    return " ".join(parts[:2]) + ("\n" + parts[2] if len(parts) > 2 else "")


class FeedbackEngine:
    """Scores candidates against one task family through the execution pool.

    Mutant outputs are cached per (task, mutant): they do not depend on the
    candidate, so repeat submissions within a session reuse them.
    """

    def __init__(self, pool, seed: int = 0):
        self._pool = pool
        self._rng = random.Random(seed)
        self._mutant_runs: dict[tuple[str, str], tuple] = {}

    # -- correctness ---------------------------------------------------------

    def check_correctness(self, candidate: Candidate, task: TaskSpec) -> CorrectnessReport:
        pairs = task.expected_outputs
        if pairs is None:
            raise ValueError(f"task {task.task_id!r} has no materialized expected outputs")
        for tin, expected in pairs:
            verdict = self._pool.eval_assertion(
                task.implementation, task.function_name, candidate.source, tin.args, expected
            )
            if verdict.status != "ok":
                return CorrectnessReport(
                    correct=False,
                    failing_input_id=tin.input_id,
                    failure_status=verdict.status,
                    failure_detail=_failure_detail(
                        verdict.status, verdict.error_type, verdict.error_message
                    ),
                    n_tests=len(pairs),
                )
        return CorrectnessReport(correct=True, n_tests=len(pairs))

    # -- completeness --------------------------------------------------------

    def _mutant_outputs(self, task: TaskSpec, mutant) -> tuple:
        key = (task.task_id, mutant.mutant_id)
        cached = self._mutant_runs.get(key)
        if cached is not None:
            return cached
        runs = []
        for tin in task.test_inputs:
            verdict = self._pool.run_function(mutant.implementation, task.function_name, tin.args)
            runs.append((tin, verdict.status == "ok", verdict.value))
        self._mutant_runs[key] = tuple(runs)
        return self._mutant_runs[key]

    def measure_completeness(self, candidate: Candidate, task: TaskSpec) -> CompletenessReport:
        """Partition the task's mutants into caught / uncaught / excluded.

        Assumes the candidate was already verified correct: any non-ok status
        on a mutant's output then evidences behavioral deviation and counts as
        a catch, not only assertion failures.
        """
        caught, uncaught, excluded = set(), set(), set()
        for mutant in task.mutants:
            outputs = [(tin, value) for tin, produced, value in self._mutant_outputs(task, mutant) if produced]
            if not outputs:
                excluded.add(mutant.mutant_id)
                continue
            rejected = False
            for tin, value in outputs:
                verdict = self._pool.eval_assertion(
                    task.implementation, task.function_name, candidate.source, tin.args, value
                )
                if verdict.status != "ok":
                    rejected = True
                    break
            (caught if rejected else uncaught).add(mutant.mutant_id)
        denominator = len(caught) + len(uncaught)
        if denominator == 0:
            raise CompletenessUndefinedError(
                f"task {task.task_id!r}: every mutant was excluded (no outputs on any input)"
            )
        return CompletenessReport(
            score=len(caught) / denominator,
            caught_mutant_ids=frozenset(caught),
            uncaught_mutant_ids=frozenset(uncaught),
            excluded_mutant_ids=frozenset(excluded),
        )

    # -- combined feedback ---------------------------------------------------

    def evaluate_feedback(
        self, candidate: Candidate, task: TaskSpec, mode: str = "binary", tau: float = 1.0
    ) -> Feedback:
        """Full submission evaluation: correctness first, completeness when correct.

        Incorrect submissions score 0. The numeric score always flows back to
        the caller for best-so-far tracking; the observation text stays binary
        unless enhanced mode is active.
        """
        correctness = self.check_correctness(candidate, task)
        completeness = None
        undefined = False
        score = 0.0
        revealed_id = None
        revealed_source = None
        if correctness.correct:
            try:
                completeness = self.measure_completeness(candidate, task)
                score = completeness.score
            except CompletenessUndefinedError:
                undefined = True
            if mode == "enhanced" and completeness is not None and completeness.uncaught_mutant_ids:
                revealed_id = self._rng.choice(sorted(completeness.uncaught_mutant_ids))
                revealed_source = next(
                    m.implementation for m in task.mutants if m.mutant_id == revealed_id
                )
        feedback = Feedback(
            correctness=correctness,
            completeness=completeness,
            score=score,
            observation_text="",
            mode=mode,
            revealed_mutant_id=revealed_id,
            completeness_undefined=undefined,
        )
        return replace(
            feedback, observation_text=compose_observation(feedback, tau, revealed_source)
        )

    def evaluate_probe(self, candidate: Candidate, task: TaskSpec) -> tuple[CorrectnessReport, str]:
        """Correctness-only probe for exploration turns; mutants are not run."""
        report = self.check_correctness(candidate, task)
        if report.correct:
            return report, _OBS_PROBE_PASSED.format(n=report.n_tests)
        return report, _OBS_PROBE_FAILED.format(
            input_id=report.failing_input_id, detail=report.failure_detail
        )

    # -- bug discrimination ----------------------------------------------------

    def is_bug_discriminating(self, candidate: Candidate, pair: BugPair) -> tuple[bool, list[dict]]:
        """Two-clause check: passes every trigger+regression test on the correct
        version AND fails at least one of them on the buggy version's outputs.
        """
        tests = list(pair.regression_tests) + list(pair.trigger_tests)
        details = []
        passes_on_correct = True
        fails_on_buggy = False
        for tin in tests:
            ref = self._pool.run_function(pair.correct_impl, pair.function_name, tin.args)
            if ref.status != "ok":
                raise InvalidPairError(
                    f"correct implementation failed ({ref.status}: {ref.error_message})",
                    pair_id=pair.pair_id,
                    input_id=tin.input_id,
                )
            on_correct = self._pool.eval_assertion(
                pair.correct_impl, pair.function_name, candidate.source, tin.args, ref.value
            )
            if on_correct.status != "ok":
                passes_on_correct = False
            buggy = self._pool.run_function(pair.buggy_impl, pair.function_name, tin.args)
            if buggy.status == "ok":
                on_buggy = self._pool.eval_assertion(
                    pair.correct_impl, pair.function_name, candidate.source, tin.args, buggy.value
                )
                buggy_status = on_buggy.status
                if on_buggy.status != "ok":
                    fails_on_buggy = True
            else:
                buggy_status = f"no_output:{buggy.status}"
            details.append(
                {
                    "input_id": tin.input_id,
                    "on_correct": on_correct.status,
                    "on_buggy": buggy_status,
                }
            )
        return passes_on_correct and fails_on_buggy, details
