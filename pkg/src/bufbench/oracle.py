"""Exact ground-truth labeling of buffer writes.

Safety follows the benchmark convention: a write is SAFE when the index is
less than or equal to the array length on every considered execution, and
UNSAFE when some execution makes it exceed the length. Note the deliberate
off-by-one: index == length counts as SAFE here even though real C would
already be out of bounds. Labels are assigned under non-crash semantics,
i.e. execution is assumed to continue past earlier unsafe writes.

Writes come in two structural kinds:

* TAUT: the index is set exactly once, to a literal, in the main scope, and
  never appears in any guard. Safety is decided from that single value,
  "as if the write were reached" even when its enclosing branch is dead.
* COND: the write sits in the main scope and its index is shaped by control
  flow or by a rand() value. Safety quantifies over every initial rand
  value: UNSAFE if any assignment reaches the write with index > length,
  SAFE if all of them stay within bounds.

The quantification is made exact by a finite partition argument: under the
generator grammar every comparison involves at most one rand-influenced
value, and all runtime values are literals shifted by a bounded number of
increments, so program behavior is constant between consecutive thresholds
drawn from the program's literals. ``rand_partition`` picks one
representative per induced interval (plus the interval endpoints), and
``classify_writes`` evaluates the interpreter on the joint representative
grid. ``brute_force_oracle`` re-derives the labels by exhaustively
enumerating a rand domain with the same aggregation, as an independent
check on the partition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codegen import (
    RAND_DOMAIN_MAX,
    ArrayDecl,
    BufferWriteStmt,
    ForLoop,
    Guard,
    IfElse,
    Increment,
    IntDecl,
    KIND_COND,
    KIND_TAUT,
    LiteralAssign,
    ProgramAst,
    RandAssign,
    WhileLoop,
    collect_literals,
)

SAFE = "SAFE"
UNSAFE = "UNSAFE"

LABEL_BUFWRITE_COND_SAFE = "BUFWRITE_COND_SAFE"
LABEL_BUFWRITE_COND_UNSAFE = "BUFWRITE_COND_UNSAFE"
LABEL_BUFWRITE_TAUT_SAFE = "BUFWRITE_TAUT_SAFE"
LABEL_BUFWRITE_TAUT_UNSAFE = "BUFWRITE_TAUT_UNSAFE"
LABEL_BODY = "BODY"
LABEL_OTHER = "OTHER"

ALL_LINE_LABELS = (
    LABEL_BUFWRITE_COND_SAFE,
    LABEL_BUFWRITE_COND_UNSAFE,
    LABEL_BUFWRITE_TAUT_SAFE,
    LABEL_BUFWRITE_TAUT_UNSAFE,
    LABEL_BODY,
    LABEL_OTHER,
)

_LOOP_FUSE = 1_000_000
_GRID_LOOP_FUSE = 100_000
_JOINT_GUARD = 5_000_000


class OracleError(Exception):
    """Base class for labeling failures."""


class GrammarError(OracleError):
    """The AST violates the restricted grammar the oracle relies on."""


class LabelingError(OracleError):
    """A structural-kind tag contradicts the structural rules."""


class OracleInternalError(OracleError):
    """Interpreter invariant broken (e.g. a loop failed to terminate)."""


class EnumerationBudgetError(OracleError):
    """Brute-force enumeration would exceed its budget."""


# ---------------------------------------------------------------------------
# Grammar validation
# ---------------------------------------------------------------------------


def _guard_entities(guard: Guard) -> list[str]:
    names = [guard.lhs]
    if isinstance(guard.rhs, str):
        names.append(guard.rhs)
    return names


def validate_ast(ast: ProgramAst) -> None:
    """Check the restrictions that make labeling exactly decidable.

    Raises GrammarError naming the offending statement. Checks: single
    declaration per entity, declare-before-use, definite assignment on all
    paths, loop shape (guard variable strictly increased by the body, bound
    fixed at loop entry, guard op < or <=), rand() only in the main scope,
    nesting depth, and that no comparison involves two rand-influenced
    values.
    """
    declared: dict[str, type] = {}
    for s in ast.body:
        if isinstance(s, (IntDecl, ArrayDecl)):
            if s.name in declared:
                raise GrammarError(f"line {s.line}: {s.name} declared twice")
            declared[s.name] = type(s)

    def require_int(name: str, line: int) -> None:
        if declared.get(name) is not IntDecl:
            raise GrammarError(f"line {line}: {name} is not a declared int")

    def require_array(name: str, line: int) -> None:
        if declared.get(name) is not ArrayDecl:
            raise GrammarError(f"line {line}: {name} is not a declared array")

    # taint[name] = set of rand entities the current value may depend on
    def check(stmts, assigned: set[str], taint: dict[str, frozenset],
              depth: int, in_main: bool, loop_guard: str | None) -> set[str]:
        for s in stmts:
            if isinstance(s, (IntDecl, ArrayDecl)):
                if not in_main or depth != 0:
                    raise GrammarError(f"line {s.line}: declaration outside main scope")
            elif isinstance(s, LiteralAssign):
                require_int(s.name, s.line)
                assigned.add(s.name)
                taint[s.name] = frozenset()
            elif isinstance(s, RandAssign):
                if not in_main:
                    raise GrammarError(
                        f"line {s.line}: rand() assignment outside the main scope")
                require_int(s.name, s.line)
                assigned.add(s.name)
                taint[s.name] = frozenset([s.name])
            elif isinstance(s, Increment):
                require_int(s.name, s.line)
                if s.name not in assigned:
                    raise GrammarError(f"line {s.line}: {s.name} incremented before set")
            elif isinstance(s, BufferWriteStmt):
                require_array(s.array, s.line)
                require_int(s.index, s.line)
                if s.index not in assigned:
                    raise GrammarError(f"line {s.line}: index {s.index} used before set")
                if len(taint.get(s.index, frozenset())) > 1:
                    raise GrammarError(
                        f"line {s.line}: index {s.index} depends on several rand values")
            elif isinstance(s, IfElse):
                _check_guard(s.guard, s.line, assigned, taint, declared)
                if depth + 1 > 2:
                    raise GrammarError(f"line {s.line}: nesting deeper than 2")
                a1 = check(s.then_body, set(assigned), dict(taint), depth + 1, False, None)
                a2 = check(s.else_body, set(assigned), dict(taint), depth + 1, False, None)
                merged = dict(taint)
                _merge_taint(merged, s.then_body, s.else_body, taint)
                taint.clear()
                taint.update(merged)
                assigned |= a1 & a2
            elif isinstance(s, (WhileLoop, ForLoop)):
                if depth + 1 > 2:
                    raise GrammarError(f"line {s.line}: nesting deeper than 2")
                _check_loop(s, assigned, taint, declared)
            else:
                raise GrammarError(f"unknown statement {s!r}")
        return assigned

    def _check_guard(guard: Guard, line: int, assigned, taint, declared_map) -> None:
        for name in _guard_entities(guard):
            require_int(name, line)
            if name not in assigned:
                raise GrammarError(f"line {line}: {name} read in guard before set")
        tainted = frozenset()
        for name in _guard_entities(guard):
            tainted |= taint.get(name, frozenset())
        if len(tainted) > 1:
            raise GrammarError(
                f"line {line}: comparison involves two rand values {sorted(tainted)}")
        if isinstance(guard.rhs, str) and guard.rhs == guard.lhs:
            raise GrammarError(f"line {line}: guard compares {guard.lhs} to itself")

    def _check_loop(s, assigned, taint, declared_map) -> None:
        if isinstance(s, WhileLoop):
            guard = s.guard
            body = s.body
            var = guard.lhs
            if var not in assigned:
                raise GrammarError(f"line {s.line}: loop variable {var} not initialized")
        else:
            guard = s.guard
            body = s.body
            var = s.var
            require_int(var, s.line)
            assigned.add(var)
            taint[var] = frozenset()
            if guard.lhs != var:
                raise GrammarError(f"line {s.line}: for-guard must test {var}")
        _check_guard(guard, s.line, assigned, taint, declared)
        if guard.op not in ("<", "<="):
            raise GrammarError(f"line {s.line}: loop guard op {guard.op!r} may not terminate")
        increments = [b for b in body if isinstance(b, Increment)]
        writes = [b for b in body if isinstance(b, BufferWriteStmt)]
        if len(increments) + len(writes) != len(body):
            raise GrammarError(f"line {s.line}: loop body holds a disallowed statement")
        if isinstance(s, WhileLoop):
            if len(increments) != 1 or increments[0].name != var:
                raise GrammarError(
                    f"line {s.line}: while body must increment its guard variable once")
        else:
            if increments:
                raise GrammarError(f"line {s.line}: for body must not increment")
        for w in writes:
            require_array(w.array, w.line)
            require_int(w.index, w.line)
            if w.index == var:
                raise GrammarError(
                    f"line {w.line}: loop-hosted write indexes the guard variable")
            if w.index not in assigned:
                raise GrammarError(f"line {w.line}: index {w.index} used before set")
        if isinstance(guard.rhs, str) and guard.rhs == var:
            raise GrammarError(f"line {s.line}: loop bound equals the guard variable")
        # exit value of the guard variable may now depend on the bound
        bound_taint = taint.get(guard.rhs, frozenset()) if isinstance(guard.rhs, str) else frozenset()
        taint[var] = taint.get(var, frozenset()) | bound_taint
        if len(taint[var]) > 1:
            raise GrammarError(
                f"line {s.line}: loop mixes rand values {sorted(taint[var])}")

    def _merge_taint(merged, then_body, else_body, before) -> None:
        for branch in (then_body, else_body):
            snapshot = dict(before)
            _apply_taint(branch, snapshot)
            for name, t in snapshot.items():
                merged[name] = merged.get(name, frozenset()) | t

    def _apply_taint(stmts, taint) -> None:
        for s in stmts:
            if isinstance(s, LiteralAssign):
                taint[s.name] = frozenset()
            elif isinstance(s, RandAssign):
                taint[s.name] = frozenset([s.name])
            elif isinstance(s, IfElse):
                _apply_taint(s.then_body, taint)
                _apply_taint(s.else_body, taint)
            elif isinstance(s, (WhileLoop, ForLoop)):
                var = s.guard.lhs
                bound = s.guard.rhs
                extra = taint.get(bound, frozenset()) if isinstance(bound, str) else frozenset()
                taint[var] = taint.get(var, frozenset()) | extra

    check(ast.body, set(), {}, 0, True, None)


def rand_entities(ast: ProgramAst) -> list[str]:
    """Entities assigned from rand(), in source order."""
    names: list[str] = []

    def walk(stmts) -> None:
        for s in stmts:
            if isinstance(s, RandAssign) and s.name not in names:
                names.append(s.name)
            elif isinstance(s, IfElse):
                walk(s.then_body)
                walk(s.else_body)
            elif isinstance(s, (WhileLoop, ForLoop)):
                walk(s.body)

    walk(ast.body)
    return names


def _increment_budget(ast: ProgramAst) -> int:
    count = 0

    def walk(stmts) -> int:
        nonlocal count
        for s in stmts:
            if isinstance(s, Increment):
                count += 1
            elif isinstance(s, IfElse):
                walk(s.then_body)
                walk(s.else_body)
            elif isinstance(s, (WhileLoop, ForLoop)):
                count += 1  # a <= bound can overshoot by one
                walk(s.body)
        return count

    walk(ast.body)
    return count


def rand_partition(ast: ProgramAst) -> dict[str, list[int]]:
    """Representative rand values that exactly cover all behavior classes.

    All runtime values under the grammar are program literals or rand
    values shifted by at most the program's increment budget, so every
    comparison outcome can only flip at literal +/- a small offset. The
    representatives take each program literal with a window of that width
    around it, plus 0 and the domain maximum, clipped to the rand domain.
    """
    validate_ast(ast)
    entities = rand_entities(ast)
    if not entities:
        return {}
    window = _increment_budget(ast) + 2
    points = {0, RAND_DOMAIN_MAX}
    for lit in collect_literals(ast):
        for delta in range(-window, window + 1):
            v = lit + delta
            if 0 <= v <= RAND_DOMAIN_MAX:
                points.add(v)
    reps = sorted(points)
    return {name: list(reps) for name in entities}


# ---------------------------------------------------------------------------
# Concrete interpretation
# ---------------------------------------------------------------------------


@dataclass
class WriteOutcome:
    line: int
    reached: bool
    index: int          # observed index if reached, else the final store value
    unsafe_hit: bool    # True when some reached occurrence had index > length


@dataclass
class ExecutionTrace:
    writes: list            # list[WriteOutcome], in ast.writes order
    final_store: dict


def interpret(ast: ProgramAst, rand_values: dict[str, int]) -> ExecutionTrace:
    """Small-step concrete execution for one rand assignment.

    Unsafe writes are recorded and execution continues (non-crash
    semantics). ``rand_values`` must give a value for every rand entity.
    """
    for name in rand_entities(ast):
        if name not in rand_values:
            raise OracleError(f"rand_values missing entity {name}")

    store: dict[str, int] = {}
    write_stmts = _write_statements(ast)
    index_of = {id(stmt): i for i, stmt in enumerate(write_stmts)}
    outcomes = [WriteOutcome(stmt.line, False, 0, False) for stmt in write_stmts]

    def run(stmts) -> None:
        for s in stmts:
            if isinstance(s, (IntDecl, ArrayDecl)):
                continue
            if isinstance(s, LiteralAssign):
                store[s.name] = s.value
            elif isinstance(s, RandAssign):
                store[s.name] = int(rand_values[s.name])
            elif isinstance(s, Increment):
                store[s.name] += 1
            elif isinstance(s, BufferWriteStmt):
                out = outcomes[index_of[id(s)]]
                idx = store[s.index]
                out.reached = True
                out.index = idx
                if idx > ast.array_lengths[s.array]:
                    out.unsafe_hit = True
            elif isinstance(s, IfElse):
                if _guard_true(s.guard, store):
                    run(s.then_body)
                else:
                    run(s.else_body)
            elif isinstance(s, WhileLoop):
                fuse = 0
                while _guard_true(s.guard, store):
                    run(s.body)
                    fuse += 1
                    if fuse > _LOOP_FUSE:
                        raise OracleInternalError(
                            f"line {s.line}: loop exceeded {_LOOP_FUSE} iterations")
            elif isinstance(s, ForLoop):
                store[s.var] = s.init
                fuse = 0
                while _guard_true(s.guard, store):
                    run(s.body)
                    store[s.var] += 1
                    fuse += 1
                    if fuse > _LOOP_FUSE:
                        raise OracleInternalError(
                            f"line {s.line}: loop exceeded {_LOOP_FUSE} iterations")
            else:
                raise OracleInternalError(f"cannot interpret {s!r}")

    run(ast.body)
    for stmt, out in zip(write_stmts, outcomes):
        if not out.reached:
            out.index = store.get(stmt.index, 0)
    return ExecutionTrace(writes=outcomes, final_store=dict(store))


def _guard_true(guard: Guard, store: dict[str, int]) -> bool:
    lhs = store[guard.lhs]
    rhs = store[guard.rhs] if isinstance(guard.rhs, str) else guard.rhs
    if guard.op == "<":
        return lhs < rhs
    if guard.op == "<=":
        return lhs <= rhs
    if guard.op == ">":
        return lhs > rhs
    if guard.op == ">=":
        return lhs >= rhs
    if guard.op == "==":
        return lhs == rhs
    return lhs != rhs


def _write_statements(ast: ProgramAst) -> list[BufferWriteStmt]:
    found: list[BufferWriteStmt] = []

    def walk(stmts) -> None:
        for s in stmts:
            if isinstance(s, BufferWriteStmt):
                found.append(s)
            elif isinstance(s, IfElse):
                walk(s.then_body)
                walk(s.else_body)
            elif isinstance(s, (WhileLoop, ForLoop)):
                walk(s.body)

    walk(ast.body)
    found.sort(key=lambda s: s.line)
    return found


@dataclass
class GridTrace:
    """Outcome of running every rand assignment of a grid in lockstep."""

    reached: list       # per write: bool array (n,)
    unsafe: list        # per write: bool array (n,)
    index: list         # per write: int array (n,), last observed where reached
    final_store: dict   # name -> int array (n,)
    n: int


def _interpret_grid(ast: ProgramAst, grids: dict[str, np.ndarray]) -> GridTrace:
    """Vectorized lockstep execution over n rand assignments.

    Semantically identical to running ``interpret`` once per assignment;
    loops are stepped iteration by iteration with per-lane activity masks.
    """
    names = rand_entities(ast)
    n = 1
    for name in names:
        n = len(grids[name])
        break
    store: dict[str, np.ndarray] = {}
    write_stmts = _write_statements(ast)
    index_of = {id(stmt): i for i, stmt in enumerate(write_stmts)}
    reached = [np.zeros(n, dtype=bool) for _ in write_stmts]
    unsafe = [np.zeros(n, dtype=bool) for _ in write_stmts]
    index = [np.zeros(n, dtype=np.int64) for _ in write_stmts]

    def guard_vec(guard: Guard) -> np.ndarray:
        lhs = store[guard.lhs]
        rhs = store[guard.rhs] if isinstance(guard.rhs, str) else guard.rhs
        if guard.op == "<":
            return lhs < rhs
        if guard.op == "<=":
            return lhs <= rhs
        if guard.op == ">":
            return lhs > rhs
        if guard.op == ">=":
            return lhs >= rhs
        if guard.op == "==":
            return lhs == rhs
        return lhs != rhs

    def assign(name: str, values, mask: np.ndarray) -> None:
        if name in store:
            store[name] = np.where(mask, values, store[name])
        else:
            base = np.zeros(n, dtype=np.int64)
            store[name] = np.where(mask, values, base)

    def run(stmts, mask: np.ndarray) -> None:
        if not mask.any():
            return
        for s in stmts:
            if isinstance(s, (IntDecl, ArrayDecl)):
                continue
            if isinstance(s, LiteralAssign):
                assign(s.name, s.value, mask)
            elif isinstance(s, RandAssign):
                assign(s.name, grids[s.name], mask)
            elif isinstance(s, Increment):
                store[s.name] = np.where(mask, store[s.name] + 1, store[s.name])
            elif isinstance(s, BufferWriteStmt):
                wi = index_of[id(s)]
                idx = store[s.index]
                reached[wi] |= mask
                unsafe[wi] |= mask & (idx > ast.array_lengths[s.array])
                index[wi] = np.where(mask, idx, index[wi])
            elif isinstance(s, IfElse):
                truth = guard_vec(s.guard)
                run(s.then_body, mask & truth)
                run(s.else_body, mask & ~truth)
            elif isinstance(s, WhileLoop):
                fuse = 0
                while True:
                    active = mask & guard_vec(s.guard)
                    if not active.any():
                        break
                    run(s.body, active)
                    fuse += 1
                    if fuse > _GRID_LOOP_FUSE:
                        raise OracleInternalError(
                            f"line {s.line}: loop exceeded {_GRID_LOOP_FUSE} iterations")
            elif isinstance(s, ForLoop):
                assign(s.var, s.init, mask)
                fuse = 0
                while True:
                    active = mask & guard_vec(s.guard)
                    if not active.any():
                        break
                    run(s.body, active)
                    store[s.var] = np.where(active, store[s.var] + 1, store[s.var])
                    fuse += 1
                    if fuse > _GRID_LOOP_FUSE:
                        raise OracleInternalError(
                            f"line {s.line}: loop exceeded {_GRID_LOOP_FUSE} iterations")
            else:
                raise OracleInternalError(f"cannot interpret {s!r}")

    run(ast.body, np.ones(n, dtype=bool))
    return GridTrace(reached=reached, unsafe=unsafe, index=index,
                     final_store=store, n=n)


def _joint_grids(ast: ProgramAst, values_per_entity: dict[str, list[int]],
                 guard: int = _JOINT_GUARD) -> dict[str, np.ndarray]:
    names = list(values_per_entity)
    total = 1
    for name in names:
        total *= len(values_per_entity[name])
    if total > guard:
        raise EnumerationBudgetError(
            f"joint enumeration of {total} assignments exceeds budget {guard}")
    if not names:
        return {}
    axes = [np.asarray(values_per_entity[name], dtype=np.int64) for name in names]
    mesh = np.meshgrid(*axes, indexing="ij")
    return {name: m.reshape(-1) for name, m in zip(names, mesh)}


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WriteClassification:
    line: int
    structural_kind: str
    safety: str
    reachable: bool


def _taut_index_info(ast: ProgramAst, index: str):
    """(is_taut_shaped, unique main-scope literal or None) for an index."""
    main_literal_assigns = []
    assigns_elsewhere = 0
    increments = 0
    rand_assigned = False
    in_guard = False

    def scan(stmts, in_main: bool) -> None:
        nonlocal assigns_elsewhere, increments, rand_assigned, in_guard
        for s in stmts:
            if isinstance(s, LiteralAssign) and s.name == index:
                if in_main:
                    main_literal_assigns.append(s)
                else:
                    assigns_elsewhere += 1
            elif isinstance(s, RandAssign) and s.name == index:
                rand_assigned = True
            elif isinstance(s, Increment) and s.name == index:
                increments += 1
            elif isinstance(s, IfElse):
                if index in _guard_entities(s.guard):
                    in_guard = True
                scan(s.then_body, False)
                scan(s.else_body, False)
            elif isinstance(s, (WhileLoop, ForLoop)):
                if index in _guard_entities(s.guard):
                    in_guard = True
                if isinstance(s, ForLoop) and s.var == index:
                    assigns_elsewhere += 1
                scan(s.body, False)

    scan(ast.body, True)
    is_taut = (len(main_literal_assigns) == 1 and assigns_elsewhere == 0
               and increments == 0 and not rand_assigned and not in_guard)
    value = main_literal_assigns[0].value if is_taut else None
    return is_taut, value


def classify_writes(ast: ProgramAst) -> list[WriteClassification]:
    """Safety and structural kind for every write, in line order.

    Structural kinds are re-derived from the AST and checked against the
    generator's tags; a mismatch raises LabelingError so generator bugs
    surface instead of being masked.
    """
    validate_ast(ast)
    write_stmts = _write_statements(ast)
    scopes = {w.line: w.enclosing_scope for w in ast.writes}

    derived: list[tuple[str, int | None]] = []
    for stmt in write_stmts:
        is_taut, value = _taut_index_info(ast, stmt.index)
        in_main = scopes[stmt.line] == "main"
        if is_taut:
            kind = KIND_TAUT
        elif in_main:
            kind = KIND_COND
        else:
            raise LabelingError(
                f"line {stmt.line}: write is neither TAUT-shaped nor in the main scope")
        if kind != stmt.structural_kind:
            raise LabelingError(
                f"line {stmt.line}: tagged {stmt.structural_kind} but derived {kind}")
        derived.append((kind, value))

    partition = rand_partition(ast)
    trace = _interpret_grid(ast, _joint_grids(ast, partition))

    results: list[WriteClassification] = []
    for wi, stmt in enumerate(write_stmts):
        kind, taut_value = derived[wi]
        length = ast.array_lengths[stmt.array]
        if kind == KIND_TAUT:
            safety = UNSAFE if taut_value > length else SAFE
            reachable = bool(trace.reached[wi].any())
        else:
            if not trace.reached[wi].all():
                raise LabelingError(
                    f"line {stmt.line}: main-scope write not reached on some path")
            safety = UNSAFE if trace.unsafe[wi].any() else SAFE
            reachable = True
        results.append(WriteClassification(
            line=stmt.line, structural_kind=kind, safety=safety, reachable=reachable))
    return results


def label_lines(ast: ProgramAst) -> list[str]:
    """One label per source line: BUFWRITE_* on write lines, BODY inside the
    function, OTHER for the include, the signature, and the closing brace."""
    classifications = classify_writes(ast)
    by_line = {c.line: c for c in classifications}
    if len(by_line) != len(classifications):
        raise LabelingError("two writes share a line")
    labels = []
    for line in range(1, ast.line_count + 1):
        if line in (1, 2, ast.line_count):
            labels.append(LABEL_OTHER)
        elif line in by_line:
            c = by_line[line]
            labels.append(f"BUFWRITE_{c.structural_kind}_{c.safety}")
        else:
            labels.append(LABEL_BODY)
    return labels


def brute_force_oracle(ast: ProgramAst, domain: tuple[int, int] = (0, 200),
                       budget: int = 2_000_000) -> list[str]:
    """Safety labels by exhaustive enumeration of rand assignments.

    Independent of the partition construction: every joint assignment over
    ``domain`` is executed, then aggregated with the same forall/exists
    rule as ``classify_writes``. Raises EnumerationBudgetError when the
    joint domain is too large.
    """
    validate_ast(ast)
    lo, hi = domain
    entities = rand_entities(ast)
    values = {name: list(range(lo, hi + 1)) for name in entities}
    grids = _joint_grids(ast, values, guard=budget)
    trace = _interpret_grid(ast, grids)

    write_stmts = _write_statements(ast)
    labels: list[str] = []
    for wi, stmt in enumerate(write_stmts):
        is_taut, _ = _taut_index_info(ast, stmt.index)
        length = ast.array_lengths[stmt.array]
        if is_taut:
            # as-if-reached: use the observed index where reached, the final
            # store value otherwise (identical for TAUT indexes)
            as_if = np.where(trace.reached[wi], trace.index[wi],
                             trace.final_store[stmt.index])
            labels.append(UNSAFE if (as_if > length).any() else SAFE)
        else:
            labels.append(UNSAFE if trace.unsafe[wi].any() else SAFE)
    return labels
