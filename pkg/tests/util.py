"""Shared task builders, scripted-session helpers, and the independent
brute-force evaluator the engine is checked against."""

from __future__ import annotations

import copy
import json
import os
import re
import shlex
import sys
import textwrap

from specharness.corpus import MutantSpec, TaskSpec, TestInput
from specharness.feedback import CorrectnessReport, Feedback


def runner_command() -> list[str]:
    """Launch command for the runner under test.

    Defaults to the bundled stub; set SPECHARNESS_RUNNER_CMD to exercise the
    suite against another protocol-conformant runner.
    """
    override = os.environ.get("SPECHARNESS_RUNNER_CMD")
    if override:
        return shlex.split(override)
    return [sys.executable, "-m", "specharness.stubrunner"]

SEARCH_IMPL = textwrap.dedent(
    '''
    def search(lst):
        frq = [0] * (max(lst) + 1)
        for i in lst:
            frq[i] += 1
        ans = -1
        for i in range(1, len(frq)):
            if frq[i] >= i:
                ans = i
        return ans
    '''
).strip() + "\n"

SEARCH_DOC = (
    "You are given a non-empty list of positive integers. Return the greatest "
    "integer that is greater than zero and has a frequency greater than or "
    "equal to its own value. If no such value exists, return -1."
)

# Handcrafted mutants, one per ground-truth sub-condition of `search`.
SEARCH_MUTANTS = {
    # returns a value outside {-1} | lst
    "m_out_of_range": "def search(lst):\n    return max(lst) + 1\n",
    # returns an in-list value whose frequency is below its value
    "m_freq_violator": "def search(lst):\n    return max(lst)\n",
    # returns the smallest qualifying value instead of the greatest
    "m_first_qualifying": textwrap.dedent(
        '''
        def search(lst):
            frq = [0] * (max(lst) + 1)
            for i in lst:
                frq[i] += 1
            for i in range(1, len(frq)):
                if frq[i] >= i:
                    return i
            return -1
        '''
    ).strip() + "\n",
    # claims nothing qualifies even when something does
    "m_always_minus1": "def search(lst):\n    return -1\n",
}

SEARCH_INPUTS = [
    ("i1", [[4, 1, 2, 2, 3, 1]]),
    ("i2", [[5, 5, 5, 5, 1]]),
    ("i3", [[2, 3]]),
    ("i4", [[1]]),
    ("i5", [[3, 3, 3, 1]]),
]

# The combined postcondition covering all four sub-conditions.
SEARCH_COMBINED_PHI = textwrap.dedent(
    """
    from collections import Counter
    freq = Counter(lst)
    qualifying = [v for v in set(lst) if v > 0 and freq[v] >= v]
    if return_value == -1:
        assert not qualifying
    else:
        assert return_value > 0 and return_value in lst
        assert freq[return_value] >= return_value
        assert return_value == max(qualifying)
    """
).strip()

# Five-turn exploratory trajectory for `search`: probe the first three
# sub-conditions, hit an assertion failure on a tightened probe, then submit
# the combined postcondition.
SEARCH_SCRIPT = [
    "<think>The result should come from the list, or be -1.</think>"
    "<assert>assert return_value == -1 or (return_value > 0 and return_value in lst)</assert>",
    "<think>A positive result must occur at least as often as its value.</think>"
    "<assert>assert return_value == -1 or lst.count(return_value) >= return_value</assert>",
    "<think>A positive result should be the greatest qualifying value.</think>"
    "<assert>cands = [v for v in lst if v > 0 and lst.count(v) >= v]\n"
    "assert return_value == -1 or return_value == max(cands)</assert>",
    "<think>Maybe the result is always positive; try tightening.</think>"
    "<assert>assert return_value > 0</assert>",
    "<think>The assertion failed, so the current conditions are not sufficient. "
    "Revisit and refine them: iterate over the list, compute frequencies, and "
    "cover the -1 case explicitly.</think>"
    f"<solution>{SEARCH_COMBINED_PHI}</solution>",
]


def search_task(mutant_ids=None) -> TaskSpec:
    ids = list(SEARCH_MUTANTS) if mutant_ids is None else list(mutant_ids)
    return TaskSpec(
        task_id="evalplus-0069",
        function_name="search",
        signature="def search(lst):",
        docstring=SEARCH_DOC,
        implementation=SEARCH_IMPL,
        test_inputs=tuple(TestInput(input_id=i, args=args) for i, args in SEARCH_INPUTS),
        mutants=tuple(MutantSpec(mutant_id=m, implementation=SEARCH_MUTANTS[m]) for m in ids),
    )


EAT_IMPL = textwrap.dedent(
    '''
    def eat(number, need, remaining):
        if need <= remaining:
            return [number + need, remaining - need]
        else:
            return [number + remaining, 0]
    '''
).strip() + "\n"

EAT_INPUTS = [
    ("i1", [5, 6, 10]),
    ("i2", [4, 8, 9]),
    ("i3", [1, 10, 10]),
    ("i4", [2, 11, 5]),
    ("i5", [4, 5, 7]),
]

EAT_MUTANTS = {
    "m_no_branch": "def eat(number, need, remaining):\n    return [number + need, remaining - need]\n",
    "m_zero_left": (
        "def eat(number, need, remaining):\n"
        "    if need <= remaining:\n"
        "        return [number + need, 0]\n"
        "    else:\n"
        "        return [number + remaining, 0]\n"
    ),
}

EAT_FINAL_PHI = (
    "assert (need <= remaining and return_value == [number + need, remaining - need]) "
    "or (need > remaining and return_value == [number + remaining, 0])"
)

# Six-turn exploratory trajectory for `eat`: structure, edge cases, two
# refinements, a combination probe with two statements, then the submission.
EAT_SCRIPT = [
    "<think>Verify the shape of the result: a two-element list of integers.</think>"
    "<assert>assert isinstance(return_value, list) and len(return_value) == 2 and "
    "isinstance(return_value[0], int) and isinstance(return_value[1], int)</assert>",
    "<think>Consider the case where need exceeds the stock: nothing remains.</think>"
    "<assert>assert need <= remaining or (need > remaining and return_value[1] == 0)</assert>",
    "<think>The total eaten should be correct in both branches.</think>"
    "<assert>assert (need <= remaining and return_value[0] == number + need) or "
    "(need > remaining and return_value[0] == number + remaining)</assert>",
    "<think>Combine the branch conditions for both components.</think>"
    "<assert>assert (need <= remaining and return_value[1] == remaining - need) or "
    "(need > remaining and return_value[1] == 0)\n"
    "assert (need <= remaining and return_value[0] == number + need) or "
    "(need > remaining and return_value[0] == number + remaining)</assert>",
    "<think>Make the combined condition more concise.</think>"
    "<assert>assert (need <= remaining and return_value[0] == number + need and "
    "return_value[1] == remaining - need) or (need > remaining and "
    "return_value[0] == number + remaining and return_value[1] == 0)</assert>",
    "<think>All checks hold; submit a single assertion combining them.</think>"
    f"<solution>{EAT_FINAL_PHI}</solution>",
]


def eat_task() -> TaskSpec:
    return TaskSpec(
        task_id="evalplus-0159",
        function_name="eat",
        signature="def eat(number, need, remaining):",
        docstring=None,
        implementation=EAT_IMPL,
        test_inputs=tuple(TestInput(input_id=i, args=args) for i, args in EAT_INPUTS),
        mutants=tuple(MutantSpec(mutant_id=m, implementation=impl) for m, impl in EAT_MUTANTS.items()),
    )


def simple_task(task_id="t-identity", mutants=(), inputs=((("i1", [7]),))) -> TaskSpec:
    return TaskSpec(
        task_id=task_id,
        function_name="ident",
        signature="def ident(x):",
        docstring=None,
        implementation="def ident(x):\n    return x\n",
        test_inputs=tuple(TestInput(input_id=i, args=list(args)) for i, args in inputs),
        mutants=tuple(mutants),
    )


# -- independent brute-force evaluator ----------------------------------------

def _json_roundtrip(value):
    return json.loads(json.dumps(value))


def _run_impl(source: str, name: str, args):
    """Execute an implementation directly; returns (produced, value)."""
    namespace: dict = {}
    try:
        exec(source, namespace)
        value = namespace[name](*copy.deepcopy(list(args)))
        return True, _json_roundtrip(value)
    except BaseException:
        return False, None


def _holds(assertion_source: str, function_source: str, function_name: str, args, output) -> bool:
    """Evaluate the assertion block exactly as the protocol defines it, but
    in-process: fresh namespace, positional parameter binding, return_value,
    original function loaded as a helper. Any exception counts as not holding."""
    import inspect

    namespace: dict = {}
    try:
        exec(function_source, namespace)
        fn = namespace[function_name]
        params = [
            p.name
            for p in inspect.signature(fn).parameters.values()
            if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)
        ]
        namespace.update(dict(zip(params, copy.deepcopy(list(args)))))
        namespace["return_value"] = copy.deepcopy(output)
        exec(assertion_source, namespace)
        return True
    except BaseException:
        return False


def brute_force_partition(task: TaskSpec, candidate_source: str):
    """Caught/uncaught/excluded sets by exhaustively executing every
    (mutant, input) pair and applying the candidate outside the engine."""
    caught, uncaught, excluded = set(), set(), set()
    for mutant in task.mutants:
        outputs = []
        for tin in task.test_inputs:
            produced, value = _run_impl(mutant.implementation, task.function_name, tin.args)
            if produced:
                outputs.append((tin, value))
        if not outputs:
            excluded.add(mutant.mutant_id)
            continue
        rejected = any(
            not _holds(candidate_source, task.implementation, task.function_name, tin.args, value)
            for tin, value in outputs
        )
        (caught if rejected else uncaught).add(mutant.mutant_id)
    return caught, uncaught, excluded


def brute_force_correct(task: TaskSpec, candidate_source: str) -> bool:
    for tin in task.test_inputs:
        produced, value = _run_impl(task.implementation, task.function_name, tin.args)
        if not produced:
            return False
        if not _holds(candidate_source, task.implementation, task.function_name, tin.args, value):
            return False
    return True


# -- micro-task family for the oracle-equivalence gate -------------------------

def micro_tasks():
    """Twenty small (task, correct-candidate) pairs with handcrafted mutants
    covering catching, non-catching, behavioral equivalence, crash-on-some,
    crash-on-all (excluded), and type-changing outputs."""
    specs = []

    def add(name, impl, inputs, mutants, candidates):
        for k, candidate in enumerate(candidates):
            task = TaskSpec(
                task_id=f"micro-{name}-{k}",
                function_name=name,
                signature=f"def {name}(...):",
                docstring=None,
                implementation=impl,
                test_inputs=tuple(
                    TestInput(input_id=f"i{j}", args=list(args)) for j, args in enumerate(inputs)
                ),
                mutants=tuple(MutantSpec(mutant_id=m, implementation=src) for m, src in mutants),
            )
            specs.append((task, candidate))

    add(
        "clamp",
        "def clamp(x, lo, hi):\n    return max(lo, min(x, hi))\n",
        [[5, 0, 10], [-3, 0, 10], [42, 0, 10], [7, 7, 7]],
        [
            ("swap", "def clamp(x, lo, hi):\n    return min(lo, max(x, hi))\n"),
            ("off_by_one", "def clamp(x, lo, hi):\n    return max(lo, min(x, hi)) + 1\n"),
            ("identity", "def clamp(x, lo, hi):\n    return x\n"),
            ("same", "def clamp(x, lo, hi):\n    return max(lo, min(x, hi))\n"),
            ("crash_all", "def clamp(x, lo, hi):\n    raise RuntimeError('boom')\n"),
        ],
        [
            "assert lo <= return_value <= hi",
            "assert return_value == max(lo, min(x, hi))",
        ],
    )
    add(
        "total",
        "def total(xs):\n    return sum(xs)\n",
        [[[1, 2, 3]], [[]], [[-5, 5]], [[10]]],
        [
            ("plus_one", "def total(xs):\n    return sum(xs) + 1\n"),
            ("length", "def total(xs):\n    return len(xs)\n"),
            ("crash_some", "def total(xs):\n    return xs[0] + sum(xs[1:])\n"),
            ("stringify", "def total(xs):\n    return str(sum(xs))\n"),
        ],
        [
            "assert return_value == sum(xs)",
            "assert return_value - sum(xs) == 0",
        ],
    )
    add(
        "dedup_sorted",
        "def dedup_sorted(xs):\n    return sorted(set(xs))\n",
        [[[3, 1, 2, 1]], [[1, 1, 1]], [[]], [[5, 4]]],
        [
            ("keep_dups", "def dedup_sorted(xs):\n    return sorted(xs)\n"),
            ("no_sort", "def dedup_sorted(xs):\n    return list(dict.fromkeys(xs))\n"),
            ("same", "def dedup_sorted(xs):\n    return sorted(set(xs))\n"),
        ],
        [
            "assert return_value == sorted(set(xs))",
            "assert sorted(return_value) == return_value and len(set(return_value)) == len(return_value)",
        ],
    )
    add(
        "absval",
        "def absval(x):\n    return x if x >= 0 else -x\n",
        [[5], [-5], [0]],
        [
            ("negate", "def absval(x):\n    return -x\n"),
            ("zero", "def absval(x):\n    return 0\n"),
            ("crash_all", "def absval(x):\n    return x / 0\n"),
        ],
        [
            "assert return_value == abs(x)",
            "assert return_value >= 0 and return_value in (x, -x)",
        ],
    )
    add(
        "maxpair",
        "def maxpair(a, b):\n    return a if a > b else b\n",
        [[1, 2], [2, 1], [3, 3]],
        [
            ("minpair", "def maxpair(a, b):\n    return a if a < b else b\n"),
            ("first", "def maxpair(a, b):\n    return a\n"),
            ("sum", "def maxpair(a, b):\n    return a + b\n"),
        ],
        [
            "assert return_value == max(a, b)",
            "assert return_value >= a and return_value >= b",
        ],
    )
    add(
        "count_pos",
        "def count_pos(xs):\n    return sum(1 for v in xs if v > 0)\n",
        [[[1, -2, 3]], [[-1, -2]], [[0, 1]]],
        [
            ("count_all", "def count_pos(xs):\n    return len(xs)\n"),
            ("count_neg", "def count_pos(xs):\n    return sum(1 for v in xs if v < 0)\n"),
            ("none_out", "def count_pos(xs):\n    return None\n"),
        ],
        [
            "assert return_value == sum(1 for v in xs if v > 0)",
            "assert 0 <= return_value <= len(xs)",
        ],
    )
    add(
        "reverse_list",
        "def reverse_list(xs):\n    return xs[::-1]\n",
        [[[1, 2, 3]], [[]], [[7]]],
        [
            ("sorted", "def reverse_list(xs):\n    return sorted(xs)\n"),
            ("same", "def reverse_list(xs):\n    return list(reversed(xs))\n"),
            ("drop_last", "def reverse_list(xs):\n    return xs[-2::-1]\n"),
        ],
        [
            "assert return_value == xs[::-1]",
            "assert len(return_value) == len(xs) and return_value == list(reversed(xs))",
        ],
    )
    add(
        "is_small",
        "def is_small(n):\n    return n < 10\n",
        [[3], [10], [0]],
        [
            ("leq", "def is_small(n):\n    return n <= 10\n"),
            ("always", "def is_small(n):\n    return True\n"),
            ("crash_some", "def is_small(n):\n    return 10 % n < 7\n"),
        ],
        [
            "assert return_value == (n < 10)",
            "assert isinstance(return_value, bool) and return_value == (n < 10)",
        ],
    )
    add(
        "head_or",
        "def head_or(xs, default):\n    return xs[0] if xs else default\n",
        [[[1, 2], 0], [[], 9], [[5], 1]],
        [
            ("tail", "def head_or(xs, default):\n    return xs[-1] if xs else default\n"),
            ("default_always", "def head_or(xs, default):\n    return default\n"),
            ("crash_empty", "def head_or(xs, default):\n    return xs[0]\n"),
        ],
        [
            "assert return_value == (xs[0] if xs else default)",
            "assert (xs and return_value == xs[0]) or (not xs and return_value == default)",
        ],
    )
    add(
        "scale",
        "def scale(xs, k):\n    return [v * k for v in xs]\n",
        [[[1, 2], 3], [[], 5], [[-1, 4], 0]],
        [
            ("shift", "def scale(xs, k):\n    return [v + k for v in xs]\n"),
            ("tuplify", "def scale(xs, k):\n    return ({'scaled': [v * k for v in xs]})\n"),
            ("crash_all", "def scale(xs, k):\n    raise ValueError(xs)\n"),
            ("same", "def scale(xs, k):\n    out = []\n    for v in xs:\n        out.append(v * k)\n    return out\n"),
        ],
        [
            "assert return_value == [v * k for v in xs]",
            "assert len(return_value) == len(xs) and all(r == v * k for r, v in zip(return_value, xs))",
        ],
    )
    assert len(specs) == 20
    return specs


# -- scripted feedback engine for session-level tests --------------------------

_SCORE_RE = re.compile(r"score=([0-9.]+)")


def scripted_turn(score: float | None = None, action: str = "submit", think: str = "t") -> str:
    """Build a turn whose evaluation outcome is encoded in the source.

    score=None yields an incorrect candidate; otherwise a correct one with the
    given completeness score (interpreted by ScriptedScoreEngine).
    """
    if score is None:
        body = "assert INCORRECT"
    else:
        body = f"assert True  # score={score}"
    tag = "solution" if action == "submit" else "assert"
    return f"<think>{think}</think><{tag}>{body}</{tag}>"


class ScriptedScoreEngine:
    """Feedback-engine stand-in whose verdicts are encoded in candidate text.

    Sources containing "INCORRECT" are incorrect; otherwise "score=X" sets the
    completeness score (default 1.0). Lets session properties be exercised
    without an execution pool.
    """

    def __init__(self):
        self.probe_calls = 0
        self.feedback_calls = 0

    @staticmethod
    def _parse(source: str) -> tuple[bool, float]:
        if "INCORRECT" in source:
            return False, 0.0
        match = _SCORE_RE.search(source)
        return True, float(match.group(1)) if match else 1.0

    def evaluate_probe(self, candidate, task):
        self.probe_calls += 1
        correct, _ = self._parse(candidate.source)
        report = CorrectnessReport(correct=correct, n_tests=1)
        return report, "probe ok" if correct else "probe failed"

    def evaluate_feedback(self, candidate, task, mode="binary", tau=1.0):
        self.feedback_calls += 1
        correct, score = self._parse(candidate.source)
        observation = "tests passed" if correct else "tests failed"
        if correct:
            observation += "; target reached" if score >= tau else "; target not reached"
        if mode == "enhanced" and correct and score < 1.0:
            observation += "\nuncaught mutant source: def mutant(): pass"
        return Feedback(
            correctness=CorrectnessReport(correct=correct, n_tests=1),
            completeness=None,
            score=score if correct else 0.0,
            observation_text=observation,
            mode=mode,
            revealed_mutant_id="m0" if (mode == "enhanced" and correct and score < 1.0) else None,
        )
