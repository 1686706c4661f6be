"""Benchmark corpus model: tasks, mutants, bug pairs, loaders and validation.

Corpus layout on disk is one JSON file per task (or per bug pair) inside a
directory. Canonical serialization is UTF-8, sorted keys, two-space indent,
"\n" line endings, trailing newline; loading a canonical file and re-dumping
it is byte-identical.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusError, InvalidTaskError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TestInput:
    __test__ = False  # keep pytest from collecting the Test* name

    input_id: str
    args: list
    # Reserved for inputs that need richer construction than positional JSON
    # values; the wire protocol cannot transport it, so v1 flags tasks using
    # it as invalid at materialization time instead of mis-executing them.
    setup: str | None = None


@dataclass(frozen=True)
class MutantSpec:
    mutant_id: str
    implementation: str


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    function_name: str
    signature: str
    docstring: str | None
    implementation: str
    test_inputs: tuple[TestInput, ...]
    mutants: tuple[MutantSpec, ...]
    # Write-once cache filled by materialize_expected_outputs.
    expected_outputs: tuple | None = field(default=None, compare=False)


@dataclass(frozen=True)
class BugPair:
    pair_id: str
    correct_impl: str
    buggy_impl: str
    regression_tests: tuple[TestInput, ...]
    trigger_tests: tuple[TestInput, ...]
    function_name: str = ""


@dataclass(frozen=True)
class CorpusManifest:
    corpus_id: str
    schema_version: int
    entry_ids: tuple[str, ...]


def canonical_dumps(obj) -> str:
    """Canonical corpus/report serialization: sorted keys, 2-space indent."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def _parse_function(source: str, *, path: str | None, field_name: str) -> ast.FunctionDef:
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        raise CorpusError(f"implementation does not parse: {exc.msg}", path=path, field=field_name)
    defs = [node for node in tree.body if isinstance(node, ast.FunctionDef)]
    if len(defs) != 1 or len(tree.body) != 1:
        raise CorpusError(
            "implementation must be a single function definition", path=path, field=field_name
        )
    return defs[0]


def _arity(fn: ast.FunctionDef) -> tuple[int, int, bool]:
    """(min_positional, max_positional, has_varargs) for a function def."""
    positional = list(fn.args.posonlyargs) + list(fn.args.args)
    n_defaults = len(fn.args.defaults)
    return len(positional) - n_defaults, len(positional), fn.args.vararg is not None


def _args_fit(arity: tuple[int, int, bool], n_args: int) -> bool:
    lo, hi, varargs = arity
    return n_args >= lo and (varargs or n_args <= hi)


def _require(data: dict, key: str, kind, *, path: str):
    if key not in data:
        raise CorpusError("missing required field", path=path, field=key)
    value = data[key]
    if not isinstance(value, kind):
        raise CorpusError(f"field has wrong type (expected {kind.__name__})", path=path, field=key)
    return value


def _check_schema_version(data: dict, *, path: str) -> int:
    version = _require(data, "schema_version", int, path=path)
    if version != SCHEMA_VERSION:
        raise CorpusError(
            f"unrecognized schema_version {version} (supported: {SCHEMA_VERSION})",
            path=path,
            field="schema_version",
        )
    return version


def _test_inputs_from(data: dict, key: str, *, path: str, required_nonempty: bool) -> tuple[TestInput, ...]:
    raw = _require(data, key, list, path=path)
    if required_nonempty and not raw:
        raise CorpusError("must be non-empty", path=path, field=key)
    inputs = []
    seen = set()
    for item in raw:
        if not isinstance(item, dict):
            raise CorpusError("test input must be an object", path=path, field=key)
        input_id = _require(item, "input_id", str, path=path)
        args = _require(item, "args", list, path=path)
        setup = item.get("setup")
        if setup is not None and not isinstance(setup, str):
            raise CorpusError("setup must be a string when present", path=path, field=f"{key}.setup")
        if input_id in seen:
            raise CorpusError(f"duplicate input_id {input_id!r}", path=path, field=key)
        seen.add(input_id)
        inputs.append(TestInput(input_id=input_id, args=args, setup=setup))
    return tuple(inputs)


def task_from_dict(data: dict, *, path: str | None = None) -> TaskSpec:
    path = path or "<memory>"
    _check_schema_version(data, path=path)
    task_id = _require(data, "task_id", str, path=path)
    function_name = _require(data, "function_name", str, path=path)
    signature = _require(data, "signature", str, path=path)
    docstring = data.get("docstring")
    if docstring is not None and not isinstance(docstring, str):
        raise CorpusError("docstring must be a string or null", path=path, field="docstring")
    implementation = _require(data, "implementation", str, path=path)

    fn = _parse_function(implementation, path=path, field_name="implementation")
    if fn.name != function_name:
        raise CorpusError(
            f"implementation defines {fn.name!r}, expected {function_name!r}",
            path=path,
            field="implementation",
        )
    arity = _arity(fn)

    test_inputs = _test_inputs_from(data, "test_inputs", path=path, required_nonempty=True)
    for tin in test_inputs:
        if not _args_fit(arity, len(tin.args)):
            raise CorpusError(
                f"input {tin.input_id!r} has {len(tin.args)} args; signature takes "
                f"{arity[0]}..{arity[1]}{'+' if arity[2] else ''}",
                path=path,
                field="test_inputs",
            )

    mutants = []
    seen_mutants = set()
    for item in _require(data, "mutants", list, path=path):
        if not isinstance(item, dict):
            raise CorpusError("mutant must be an object", path=path, field="mutants")
        mutant_id = _require(item, "mutant_id", str, path=path)
        impl = _require(item, "implementation", str, path=path)
        if mutant_id in seen_mutants:
            raise CorpusError(f"duplicate mutant_id {mutant_id!r}", path=path, field="mutants")
        seen_mutants.add(mutant_id)
        mfn = _parse_function(impl, path=path, field_name=f"mutants[{mutant_id}]")
        if mfn.name != function_name:
            raise CorpusError(
                f"mutant {mutant_id!r} defines {mfn.name!r}, expected {function_name!r}",
                path=path,
                field="mutants",
            )
        if _arity(mfn) != arity:
            raise CorpusError(
                f"mutant {mutant_id!r} arity differs from the original",
                path=path,
                field="mutants",
            )
        mutants.append(MutantSpec(mutant_id=mutant_id, implementation=impl))

    return TaskSpec(
        task_id=task_id,
        function_name=function_name,
        signature=signature,
        docstring=docstring,
        implementation=implementation,
        test_inputs=test_inputs,
        mutants=tuple(mutants),
    )


def task_to_dict(task: TaskSpec) -> dict:
    data = {
        "schema_version": SCHEMA_VERSION,
        "task_id": task.task_id,
        "function_name": task.function_name,
        "signature": task.signature,
        "docstring": task.docstring,
        "implementation": task.implementation,
        "test_inputs": [
            {"input_id": t.input_id, "args": t.args}
            | ({"setup": t.setup} if t.setup is not None else {})
            for t in task.test_inputs
        ],
        "mutants": [
            {"mutant_id": m.mutant_id, "implementation": m.implementation} for m in task.mutants
        ],
    }
    return data


def pair_from_dict(data: dict, *, path: str | None = None) -> BugPair:
    path = path or "<memory>"
    _check_schema_version(data, path=path)
    pair_id = _require(data, "pair_id", str, path=path)
    correct_impl = _require(data, "correct_impl", str, path=path)
    buggy_impl = _require(data, "buggy_impl", str, path=path)

    correct_fn = _parse_function(correct_impl, path=path, field_name="correct_impl")
    buggy_fn = _parse_function(buggy_impl, path=path, field_name="buggy_impl")
    if buggy_fn.name != correct_fn.name:
        raise CorpusError(
            f"buggy_impl defines {buggy_fn.name!r}, expected {correct_fn.name!r}",
            path=path,
            field="buggy_impl",
        )
    arity = _arity(correct_fn)
    if _arity(buggy_fn) != arity:
        raise CorpusError("buggy_impl arity differs from correct_impl", path=path, field="buggy_impl")

    regression = _test_inputs_from(data, "regression_tests", path=path, required_nonempty=False)
    trigger = _test_inputs_from(data, "trigger_tests", path=path, required_nonempty=True)
    for tin in list(regression) + list(trigger):
        if not _args_fit(arity, len(tin.args)):
            raise CorpusError(
                f"test {tin.input_id!r} has {len(tin.args)} args; signature takes "
                f"{arity[0]}..{arity[1]}{'+' if arity[2] else ''}",
                path=path,
                field="tests",
            )

    return BugPair(
        pair_id=pair_id,
        correct_impl=correct_impl,
        buggy_impl=buggy_impl,
        regression_tests=regression,
        trigger_tests=trigger,
        function_name=correct_fn.name,
    )


def pair_to_dict(pair: BugPair) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "pair_id": pair.pair_id,
        "correct_impl": pair.correct_impl,
        "buggy_impl": pair.buggy_impl,
        "regression_tests": [
            {"input_id": t.input_id, "args": t.args} for t in pair.regression_tests
        ],
        "trigger_tests": [{"input_id": t.input_id, "args": t.args} for t in pair.trigger_tests],
    }


def _load_json_files(path) -> list[tuple[str, dict]]:
    root = Path(path)
    if not root.is_dir():
        raise CorpusError("corpus path is not a directory", path=str(root))
    files = sorted(root.glob("*.json"))
    if not files:
        raise CorpusError("corpus directory contains no .json files", path=str(root))
    loaded = []
    for file in files:
        try:
            text = file.read_text(encoding="utf-8")
        except OSError as exc:
            raise CorpusError(f"cannot read file: {exc}", path=str(file))
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"malformed JSON: {exc}", path=str(file))
        if not isinstance(data, dict):
            raise CorpusError("top-level JSON value must be an object", path=str(file))
        loaded.append((str(file), data))
    return loaded


def load_corpus(path) -> tuple[CorpusManifest, list[TaskSpec]]:
    """Load every task file under `path`, rejecting duplicates and schema violations."""
    tasks = []
    seen = {}
    for file, data in _load_json_files(path):
        task = task_from_dict(data, path=file)
        if task.task_id in seen:
            raise CorpusError(
                f"duplicate task_id {task.task_id!r} (also defined in {seen[task.task_id]})",
                path=file,
                field="task_id",
            )
        seen[task.task_id] = file
        tasks.append(task)
    manifest = CorpusManifest(
        corpus_id=Path(path).name,
        schema_version=SCHEMA_VERSION,
        entry_ids=tuple(t.task_id for t in tasks),
    )
    return manifest, tasks


def load_bugpair_corpus(path) -> list[BugPair]:
    """Load every bug-pair file under `path`; invariants as for load_corpus."""
    pairs = []
    seen = {}
    for file, data in _load_json_files(path):
        pair = pair_from_dict(data, path=file)
        if pair.pair_id in seen:
            raise CorpusError(
                f"duplicate pair_id {pair.pair_id!r} (also defined in {seen[pair.pair_id]})",
                path=file,
                field="pair_id",
            )
        seen[pair.pair_id] = file
        pairs.append(pair)
    return pairs


def write_corpus(tasks, path) -> None:
    """Write one canonical JSON file per task under `path` (test/demo helper)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for task in tasks:
        (root / f"{task.task_id}.json").write_text(
            canonical_dumps(task_to_dict(task)), encoding="utf-8"
        )


def materialize_expected_outputs(task: TaskSpec, pool) -> list[tuple[TestInput, object]]:
    """Run the reference implementation on every test input and cache the pairs.

    The reference output is the ground truth: expected outputs are never stored
    in the corpus. A reference that raises, times out, or returns something that
    cannot round-trip through JSON makes the task invalid.
    """
    if task.expected_outputs is not None:
        return list(task.expected_outputs)
    pairs = []
    for tin in task.test_inputs:
        if tin.setup is not None:
            raise InvalidTaskError(
                "per-input setup blocks are not executable in v1",
                task_id=task.task_id,
                input_id=tin.input_id,
            )
        verdict = pool.run_function(task.implementation, task.function_name, tin.args)
        if verdict.status != "ok":
            raise InvalidTaskError(
                f"reference implementation failed ({verdict.status}: {verdict.error_message})",
                task_id=task.task_id,
                input_id=tin.input_id,
            )
        pairs.append((tin, verdict.value))
    object.__setattr__(task, "expected_outputs", tuple(pairs))
    return pairs
