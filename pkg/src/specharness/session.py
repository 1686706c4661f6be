"""Multi-turn generation strategies.

Three strategies share one turn grammar:

- exploratory: the model may probe candidates with <assert> (correctness-only
  observation, no submission consumed) before committing a <solution>.
- greedy: every well-formed turn must be a <solution>; otherwise identical.
- random_sampling: mu independent single-pass generations with an always-empty
  history, early-stopped once a correct submission meets the threshold.

Submissions are fully scored and update the best-so-far pair only on strict
improvement; the session stops at the first correct submission whose score
meets tau, or when the attempt budget runs out. An optional escalation extends
the budget once the base budget is exhausted below tau and switches feedback
to enhanced mode for the extra attempts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import TaskSpec
from .errors import BackendError, InfrastructureError, ScriptExhaustedError
from .feedback import Candidate
from .llm import ChatMessage

MODES = ("exploratory", "greedy", "random_sampling")
FEEDBACK_MODES = ("binary", "enhanced")

MALFORMED_OBSERVATION = (
    "Format error: begin with a <think>...</think> block, then take exactly one "
    "action: <assert>...</assert> to probe a candidate or <solution>...</solution> "
    "to submit the final postcondition. This attempt was consumed."
)

_PREAMBLE = """\
Objective: verify the behavior of a Python function from its implementation\
{doc_clause}. Write postconditions: Python assert statements over the \
function's input parameters and the variable return_value, which is bound to \
the function's output. The assertion block may contain several statements and \
helper definitions.

Turn structure: every turn must begin with a <think>...</think> block \
reasoning about purpose, constraints, and edge cases. After the reasoning, \
take exactly one of the following actions:
{actions}"""

_ACTION_EXPLORE = (
    "- <assert>...</assert> : propose one candidate assertion block to test; "
    "it triggers an <observation> with feedback and does not count as a submission."
)
_ACTION_SUBMIT = "- <solution>...</solution> : submit the final refined postcondition."

_TASK_TEMPLATE = """\
You will now be given the function {name}.

Signature: {signature}
{doc_block}Implementation:
{implementation}

Let's begin."""

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ASSERT_RE = re.compile(r"<assert>(.*?)</assert>", re.DOTALL)
_SOLUTION_RE = re.compile(r"<solution>(.*?)</solution>", re.DOTALL)


@dataclass(frozen=True)
class StrategyConfig:
    mode: str
    tau: float
    mu: int
    feedback_mode: str = "binary"
    escalate_extra_attempts: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.mu < 1:
            raise ValueError("mu must be >= 1")
        if self.feedback_mode not in FEEDBACK_MODES:
            raise ValueError(f"unknown feedback mode {self.feedback_mode!r}")
        if self.escalate_extra_attempts < 0:
            raise ValueError("escalate_extra_attempts must be >= 0")


@dataclass(frozen=True)
class ParsedTurn:
    action: str  # "explore" | "submit" | "malformed"
    think: str | None = None
    source: str | None = None


@dataclass
class HistoryEntry:
    attempt_index: int
    raw_model_text: str
    parsed_action: str
    candidate_source: str | None = None
    observation_text: str | None = None
    score: float | None = None
    think_text: str | None = None
    correct: bool | None = None
    tokens_in: int = 0
    tokens_out: int = 0


@dataclass
class SessionState:
    task_id: str
    history: list[HistoryEntry] = field(default_factory=list)
    best_source: str | None = None
    best_score: float = 0.0
    attempts_used: int = 0
    submissions_used: int = 0
    terminated: bool = False
    termination_reason: str | None = None
    escalated: bool = False


@dataclass(frozen=True)
class SessionOutcome:
    task_id: str
    config: StrategyConfig
    final_candidate: str | None
    final_score: float
    correct: bool
    attempts_used: int
    submissions_used: int
    termination_reason: str
    escalated: bool
    trajectory: tuple[HistoryEntry, ...]
    tokens_in: int
    tokens_out: int


def build_prompt(task: TaskSpec, history, config: StrategyConfig) -> list[ChatMessage]:
    """Preamble plus one (assistant turn, observation) pair per history entry.

    The explore action is described only in exploratory mode. Random sampling
    always renders an empty history: its generations are independent.
    """
    actions = [_ACTION_EXPLORE, _ACTION_SUBMIT] if config.mode == "exploratory" else [_ACTION_SUBMIT]
    doc_clause = " and its docstring" if task.docstring else ""
    system = _PREAMBLE.format(doc_clause=doc_clause, actions="\n".join(actions))
    doc_block = f'Docstring: """{task.docstring}"""\n' if task.docstring else ""
    user = _TASK_TEMPLATE.format(
        name=task.function_name,
        signature=task.signature,
        doc_block=doc_block,
        implementation=task.implementation,
    )
    messages = [ChatMessage("system", system), ChatMessage("user", user)]
    rendered = [] if config.mode == "random_sampling" else list(history)
    for entry in rendered:
        messages.append(ChatMessage("assistant", entry.raw_model_text))
        messages.append(
            ChatMessage("user", f"<observation>{entry.observation_text or ''}</observation>")
        )
    return messages


def parse_turn(raw_text: str, mode: str) -> ParsedTurn:
    """Extract the optional think block and exactly one action tag.

    Zero or multiple action tags, unclosed tags, empty action bodies, and
    <assert> outside exploratory mode all parse as malformed (a value, not an
    error: malformed turns still consume an attempt).
    """
    thinks = _THINK_RE.findall(raw_text)
    if raw_text.count("<think>") != len(thinks):
        return ParsedTurn("malformed")
    think = thinks[0].strip() if thinks else None

    asserts = _ASSERT_RE.findall(raw_text)
    solutions = _SOLUTION_RE.findall(raw_text)
    if raw_text.count("<assert>") != len(asserts) or raw_text.count("<solution>") != len(solutions):
        return ParsedTurn("malformed", think=think)
    if len(asserts) + len(solutions) != 1:
        return ParsedTurn("malformed", think=think)
    if asserts:
        if mode != "exploratory":
            return ParsedTurn("malformed", think=think)
        source = asserts[0].strip()
        action = "explore"
    else:
        source = solutions[0].strip()
        action = "submit"
    if not source:
        return ParsedTurn("malformed", think=think)
    return ParsedTurn(action, think=think, source=source)


def _terminate(state: SessionState, reason: str) -> None:
    state.terminated = True
    state.termination_reason = reason


def _active_feedback_mode(state: SessionState, config: StrategyConfig) -> str:
    return "enhanced" if (config.feedback_mode == "enhanced" or state.escalated) else "binary"


def step(state: SessionState, task: TaskSpec, config: StrategyConfig, backend, engine) -> SessionState:
    """One turn: generate, parse, probe or evaluate, annotate history.

    Every action, including a malformed one, consumes an attempt. Exploration
    receives a correctness-only observation and never touches the submission
    counter or the best-so-far pair.
    """
    if state.terminated:
        raise RuntimeError("step() called on a terminated session")
    messages = build_prompt(task, state.history, config)
    try:
        gen = backend.generate(messages)
    except ScriptExhaustedError:
        _terminate(state, "script_exhausted")
        return state
    except BackendError:
        # No turn happened: terminate without an entry so the trajectory holds
        # exactly the attempts that were made.
        _terminate(state, "infrastructure_error")
        return state

    parsed = parse_turn(gen.text, config.mode)
    entry = HistoryEntry(
        attempt_index=state.attempts_used + 1,
        raw_model_text=gen.text,
        parsed_action=parsed.action,
        candidate_source=parsed.source,
        think_text=parsed.think,
        tokens_in=gen.input_tokens,
        tokens_out=gen.output_tokens,
    )
    state.history.append(entry)
    state.attempts_used += 1

    if parsed.action == "malformed":
        entry.observation_text = MALFORMED_OBSERVATION
        return state

    candidate = Candidate(source=parsed.source, attempt_index=entry.attempt_index, action=parsed.action)
    try:
        if parsed.action == "explore":
            report, observation = engine.evaluate_probe(candidate, task)
            entry.observation_text = observation
            entry.correct = report.correct
        else:
            feedback = engine.evaluate_feedback(
                candidate, task, mode=_active_feedback_mode(state, config), tau=config.tau
            )
            state.submissions_used += 1
            entry.observation_text = feedback.observation_text
            entry.score = feedback.score
            entry.correct = feedback.correctness.correct
            if feedback.score > state.best_score:
                state.best_score = feedback.score
                state.best_source = candidate.source
    except InfrastructureError:
        _terminate(state, "infrastructure_error")
    return state


def decides_to_stop(state: SessionState, config: StrategyConfig) -> tuple[bool, str | None]:
    """Threshold-or-budget stopping; no other triggers.

    The threshold fires on the latest submission being correct with a score at
    or above tau. The budget is mu, extended by the configured extra attempts
    once escalation has activated.
    """
    if state.history:
        last = state.history[-1]
        if (
            last.parsed_action == "submit"
            and last.correct
            and last.score is not None
            and last.score >= config.tau
        ):
            return True, "threshold_met"
    budget = config.mu + (config.escalate_extra_attempts if state.escalated else 0)
    if state.attempts_used >= budget:
        return True, "budget_exhausted"
    return False, None


def _can_escalate(state: SessionState, config: StrategyConfig) -> bool:
    return (
        not state.escalated
        and config.escalate_extra_attempts > 0
        and state.best_score < config.tau
    )


def _outcome(task: TaskSpec, config: StrategyConfig, state: SessionState) -> SessionOutcome:
    return SessionOutcome(
        task_id=task.task_id,
        config=config,
        final_candidate=state.best_source,
        final_score=state.best_score,
        correct=state.best_source is not None,
        attempts_used=state.attempts_used,
        submissions_used=state.submissions_used,
        termination_reason=state.termination_reason or "budget_exhausted",
        escalated=state.escalated,
        trajectory=tuple(state.history),
        tokens_in=sum(e.tokens_in for e in state.history),
        tokens_out=sum(e.tokens_out for e in state.history),
    )


def run_session(task: TaskSpec, config: StrategyConfig, backend, engine) -> SessionOutcome:
    """Run one task to termination and return the best-so-far candidate."""
    if config.mode == "random_sampling":
        return _run_random_sampling(task, config, backend, engine)
    state = SessionState(task_id=task.task_id)
    while not state.terminated:
        step(state, task, config, backend, engine)
        if state.terminated:
            break
        stop, reason = decides_to_stop(state, config)
        if stop and reason == "budget_exhausted" and _can_escalate(state, config):
            state.escalated = True
            continue
        if stop:
            _terminate(state, reason)
    return _outcome(task, config, state)


def _run_random_sampling(task: TaskSpec, config: StrategyConfig, backend, engine) -> SessionOutcome:
    state = SessionState(task_id=task.task_id)
    for _ in range(config.mu):
        step(state, task, config, backend, engine)
        if state.terminated:
            break
        last = state.history[-1]
        if (
            last.parsed_action == "submit"
            and last.correct
            and last.score is not None
            and last.score >= config.tau
        ):
            _terminate(state, "threshold_met")
            break
    if not state.terminated:
        _terminate(state, "budget_exhausted")
    return _outcome(task, config, state)


# -- trajectory files ---------------------------------------------------------

def trajectory_filename(task_id: str, mode: str) -> str:
    return f"{task_id}.{mode}.jsonl"


def export_trajectory(outcome: SessionOutcome, directory) -> Path:
    """One JSON object per attempt, schema: attempt_index, action, think,
    candidate, observation, score, tokens_in, tokens_out."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / trajectory_filename(outcome.task_id, outcome.config.mode)
    lines = []
    for entry in outcome.trajectory:
        lines.append(
            json.dumps(
                {
                    "attempt_index": entry.attempt_index,
                    "action": entry.parsed_action,
                    "think": entry.think_text,
                    "candidate": entry.candidate_source,
                    "observation": entry.observation_text,
                    "score": entry.score,
                    "tokens_in": entry.tokens_in,
                    "tokens_out": entry.tokens_out,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def load_trajectory(path) -> list[dict]:
    entries = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed trajectory line: {exc}")
        if not isinstance(entry, dict) or "attempt_index" not in entry or "action" not in entry:
            raise ValueError(f"{path}:{lineno}: not a trajectory entry")
        entries.append(entry)
    return entries


def outcome_from_trajectory(task_id: str, config: StrategyConfig, entries: list[dict]) -> SessionOutcome:
    """Rebuild the outcome quantities a report needs from a stored trajectory.

    A candidate only ever becomes best-so-far with a score strictly above zero,
    so the recomputed best is the first submission reaching the maximum score.
    """
    history = [
        HistoryEntry(
            attempt_index=e["attempt_index"],
            raw_model_text="",
            parsed_action=e["action"],
            candidate_source=e.get("candidate"),
            observation_text=e.get("observation"),
            score=e.get("score"),
            think_text=e.get("think"),
            tokens_in=int(e.get("tokens_in", 0)),
            tokens_out=int(e.get("tokens_out", 0)),
        )
        for e in entries
    ]
    submissions = [e for e in history if e.parsed_action == "submit" and e.score is not None]
    best_score = max((e.score for e in submissions), default=0.0)
    best_source = None
    if best_score > 0.0:
        best_source = next(e.candidate_source for e in submissions if e.score == best_score)
    return SessionOutcome(
        task_id=task_id,
        config=config,
        final_candidate=best_source,
        final_score=best_score if best_source is not None else 0.0,
        correct=best_source is not None,
        attempts_used=len(history),
        submissions_used=len(submissions),
        termination_reason="replayed",
        escalated=False,
        trajectory=tuple(history),
        tokens_in=sum(e.tokens_in for e in history),
        tokens_out=sum(e.tokens_out for e in history),
    )
