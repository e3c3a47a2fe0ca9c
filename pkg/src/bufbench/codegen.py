"""Deterministic generator for tiny C programs with labeled buffer writes.

Every program is a single ``void main()`` built from a closed statement
grammar: integer declarations, literal assignments, ``rand()`` assignments,
``++`` increments, char-array declarations, and single-character buffer
writes, composed with if/else, while, and for nodes. The grammar is
deliberately restricted so that the safety of every buffer write is exactly
decidable by the labeling oracle:

* loop bodies only increment the loop's own guard variable (plus optional
  buffer writes that never touch the guard), so every loop terminates and
  its exit value is well defined;
* ``rand()`` assignments appear only in the main scope, at most twice per
  program;
* no comparison ever involves two rand-influenced values.

Generation is a pure function of ``(seed, GenConfig)``: identical inputs
produce byte-identical sources, manifests, and splits on any platform.
"""

from __future__ import annotations

import hashlib
import json
import random
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

GENERATOR_VERSION = "1.0"

# Stand-in for C's RAND_MAX. Values assigned from rand() range over
# [0, RAND_DOMAIN_MAX]; kept at least 2x the largest literal plus the
# increment budget so that no generated comparison saturates the domain.
RAND_DOMAIN_MAX = 255

INCLUDE_LINE = "#include <stdlib.h>"
SIGNATURE_LINE = "void main() {"
INDENT = "    "

GUARD_OPS = ("<", "<=", ">", ">=", "==", "!=")
LOOP_OPS = ("<", "<=")

KIND_TAUT = "TAUT"
KIND_COND = "COND"


class ConfigError(ValueError):
    """A GenConfig (or derived request) is invalid."""


class GenerationError(RuntimeError):
    """Dataset generation failed (I/O error, duplicate exhaustion, ...)."""


def derive_seed(root: int, *parts: object) -> int:
    """Derive a stable 64-bit sub-seed from a root seed and a label path.

    Uses sha256 so results are identical across platforms and Python
    versions; adding new stages never perturbs existing ones.
    """
    text = ":".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    file_count: int = 100
    max_entities: int = 10
    int_range: tuple[int, int] = (0, 99)
    max_cf_nodes: int = 3
    max_nesting: int = 2
    writes_per_file: tuple[int, int] = (1, 3)
    write_char_set: str = string.digits + string.ascii_letters

    def validate(self) -> None:
        lo, hi = self.int_range
        if lo > hi:
            raise ConfigError(f"int_range is empty: {self.int_range}")
        if lo < 0:
            raise ConfigError("int_range must be non-negative")
        if hi - lo + 1 < 10:
            raise ConfigError("int_range must span at least 10 values")
        if hi > RAND_DOMAIN_MAX // 2:
            raise ConfigError(
                f"int_range max {hi} exceeds half the rand domain ({RAND_DOMAIN_MAX})"
            )
        if not 3 <= self.max_entities <= 10:
            raise ConfigError("max_entities must be in [3, 10]")
        if not 1 <= self.max_cf_nodes:
            raise ConfigError("max_cf_nodes must be >= 1")
        if self.max_nesting not in (1, 2):
            raise ConfigError("max_nesting must be 1 or 2")
        wlo, whi = self.writes_per_file
        if not 1 <= wlo <= whi:
            raise ConfigError(f"writes_per_file invalid: {self.writes_per_file}")
        if self.file_count < 0:
            raise ConfigError("file_count must be >= 0")
        if not self.write_char_set:
            raise ConfigError("write_char_set is empty")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "file_count": self.file_count,
            "max_entities": self.max_entities,
            "int_range": list(self.int_range),
            "max_cf_nodes": self.max_cf_nodes,
            "max_nesting": self.max_nesting,
            "writes_per_file": list(self.writes_per_file),
            "write_char_set": self.write_char_set,
        }

    @staticmethod
    def from_dict(d: dict) -> "GenConfig":
        return GenConfig(
            seed=int(d["seed"]),
            file_count=int(d["file_count"]),
            max_entities=int(d["max_entities"]),
            int_range=(int(d["int_range"][0]), int(d["int_range"][1])),
            max_cf_nodes=int(d["max_cf_nodes"]),
            max_nesting=int(d["max_nesting"]),
            writes_per_file=(int(d["writes_per_file"][0]), int(d["writes_per_file"][1])),
            write_char_set=str(d["write_char_set"]),
        )


# ---------------------------------------------------------------------------
# Statement nodes. `line` fields are filled in by the layout pass.
# ---------------------------------------------------------------------------


@dataclass
class IntDecl:
    name: str
    line: int = 0


@dataclass
class ArrayDecl:
    name: str
    length: int
    line: int = 0


@dataclass
class LiteralAssign:
    name: str
    value: int
    line: int = 0


@dataclass
class RandAssign:
    name: str
    line: int = 0


@dataclass
class Increment:
    name: str
    line: int = 0


@dataclass
class BufferWriteStmt:
    array: str
    index: str
    char: str
    structural_kind: str  # KIND_TAUT or KIND_COND, re-verified by the oracle
    line: int = 0


@dataclass(frozen=True)
class Guard:
    lhs: str
    op: str
    rhs: Union[int, str]

    def render(self) -> str:
        return f"{self.lhs} {self.op} {self.rhs}"


@dataclass
class IfElse:
    guard: Guard
    then_body: list
    else_body: list
    line: int = 0
    else_line: int = 0
    end_line: int = 0


@dataclass
class WhileLoop:
    guard: Guard
    body: list
    line: int = 0
    end_line: int = 0


@dataclass
class ForLoop:
    var: str
    init: int
    guard: Guard
    body: list
    line: int = 0
    end_line: int = 0


Stmt = Union[
    IntDecl, ArrayDecl, LiteralAssign, RandAssign, Increment,
    BufferWriteStmt, IfElse, WhileLoop, ForLoop,
]

CF_KINDS = {IfElse: "if-else", WhileLoop: "while", ForLoop: "for"}


@dataclass(frozen=True)
class BufferWrite:
    """Structural record for one buffer write, as stored in the manifest."""

    line: int
    array: str
    array_len: int
    index_entity: str
    structural_kind: str
    enclosing_scope: str  # "main" or "cf<k>"


@dataclass(frozen=True)
class CfNode:
    node_id: str
    kind: str
    line: int
    end_line: int
    guard: str
    depth: int


@dataclass
class ProgramAst:
    """A generated program: top-level statements plus derived summaries."""

    body: list
    line_count: int = 0
    entities: dict = field(default_factory=dict)   # name -> declared line
    array_lengths: dict = field(default_factory=dict)
    writes: list = field(default_factory=list)     # list[BufferWrite], line order
    cf_nodes: list = field(default_factory=list)   # list[CfNode], pre-order

    def __post_init__(self) -> None:
        self.line_count = _layout(self.body)
        self._derive()

    def _derive(self) -> None:
        self.entities = {}
        self.array_lengths = {}
        self.writes = []
        self.cf_nodes = []
        counter = [0]

        def walk(stmts: list, scope: str, depth: int) -> None:
            for s in stmts:
                if isinstance(s, IntDecl):
                    self.entities[s.name] = s.line
                elif isinstance(s, ArrayDecl):
                    self.entities[s.name] = s.line
                    self.array_lengths[s.name] = s.length
                elif isinstance(s, BufferWriteStmt):
                    self.writes.append(BufferWrite(
                        line=s.line,
                        array=s.array,
                        array_len=self.array_lengths[s.array],
                        index_entity=s.index,
                        structural_kind=s.structural_kind,
                        enclosing_scope=scope,
                    ))
                elif isinstance(s, IfElse):
                    node_id = f"cf{counter[0]}"
                    counter[0] += 1
                    self.cf_nodes.append(CfNode(node_id, "if-else", s.line,
                                                s.end_line, s.guard.render(), depth))
                    walk(s.then_body, node_id, depth + 1)
                    walk(s.else_body, node_id, depth + 1)
                elif isinstance(s, WhileLoop):
                    node_id = f"cf{counter[0]}"
                    counter[0] += 1
                    self.cf_nodes.append(CfNode(node_id, "while", s.line,
                                                s.end_line, s.guard.render(), depth))
                    walk(s.body, node_id, depth + 1)
                elif isinstance(s, ForLoop):
                    node_id = f"cf{counter[0]}"
                    counter[0] += 1
                    self.cf_nodes.append(CfNode(node_id, "for", s.line,
                                                s.end_line, s.guard.render(), depth))
                    walk(s.body, node_id, depth + 1)

        walk(self.body, "main", 1)
        self.writes.sort(key=lambda w: w.line)


def _layout(body: list) -> int:
    """Assign 1-based line numbers; returns the closing-brace line number."""
    line = 3  # line 1 is the include, line 2 the signature

    def place(stmts: list) -> None:
        nonlocal line
        for s in stmts:
            if isinstance(s, IfElse):
                s.line = line
                line += 1
                place(s.then_body)
                s.else_line = line
                line += 1
                place(s.else_body)
                s.end_line = line
                line += 1
            elif isinstance(s, (WhileLoop, ForLoop)):
                s.line = line
                line += 1
                place(s.body)
                s.end_line = line
                line += 1
            else:
                s.line = line
                line += 1

    place(body)
    return line


def _stmt_to_dict(s: Stmt) -> dict:
    if isinstance(s, IntDecl):
        return {"k": "int_decl", "name": s.name, "line": s.line}
    if isinstance(s, ArrayDecl):
        return {"k": "array_decl", "name": s.name, "len": s.length, "line": s.line}
    if isinstance(s, LiteralAssign):
        return {"k": "assign", "name": s.name, "value": s.value, "line": s.line}
    if isinstance(s, RandAssign):
        return {"k": "rand", "name": s.name, "line": s.line}
    if isinstance(s, Increment):
        return {"k": "incr", "name": s.name, "line": s.line}
    if isinstance(s, BufferWriteStmt):
        return {"k": "write", "array": s.array, "index": s.index, "char": s.char,
                "kind": s.structural_kind, "line": s.line}
    if isinstance(s, IfElse):
        return {"k": "if", "guard": s.guard.render(), "line": s.line,
                "then": [_stmt_to_dict(x) for x in s.then_body],
                "else": [_stmt_to_dict(x) for x in s.else_body]}
    if isinstance(s, WhileLoop):
        return {"k": "while", "guard": s.guard.render(), "line": s.line,
                "body": [_stmt_to_dict(x) for x in s.body]}
    if isinstance(s, ForLoop):
        return {"k": "for", "var": s.var, "init": s.init,
                "guard": s.guard.render(), "line": s.line,
                "body": [_stmt_to_dict(x) for x in s.body]}
    raise TypeError(f"unknown statement {s!r}")


def serialize_ast(ast: ProgramAst) -> str:
    """Canonical JSON serialization, used for the determinism contract."""
    doc = {
        "line_count": ast.line_count,
        "body": [_stmt_to_dict(s) for s in ast.body],
        "writes": [w.__dict__ for w in ast.writes],
        "cf_nodes": [n.__dict__ for n in ast.cf_nodes],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_c(ast: ProgramAst) -> str:
    """Render the program to C source, one statement per line.

    Line numbers in the text match the AST's line fields exactly; rendering
    the same AST twice yields identical bytes.
    """
    lines: list[str] = [INCLUDE_LINE, SIGNATURE_LINE]

    def emit(stmts: list, depth: int) -> None:
        pad = INDENT * depth
        for s in stmts:
            if isinstance(s, IntDecl):
                lines.append(f"{pad}int {s.name};")
            elif isinstance(s, ArrayDecl):
                lines.append(f"{pad}char {s.name}[{s.length}];")
            elif isinstance(s, LiteralAssign):
                lines.append(f"{pad}{s.name} = {s.value};")
            elif isinstance(s, RandAssign):
                lines.append(f"{pad}{s.name} = rand();")
            elif isinstance(s, Increment):
                lines.append(f"{pad}{s.name}++;")
            elif isinstance(s, BufferWriteStmt):
                lines.append(f"{pad}{s.array}[{s.index}] = '{s.char}';")
            elif isinstance(s, IfElse):
                lines.append(f"{pad}if ({s.guard.render()}) {{")
                emit(s.then_body, depth + 1)
                lines.append(f"{pad}}} else {{")
                emit(s.else_body, depth + 1)
                lines.append(pad + "}")
            elif isinstance(s, WhileLoop):
                lines.append(f"{pad}while ({s.guard.render()}) {{")
                emit(s.body, depth + 1)
                lines.append(pad + "}")
            elif isinstance(s, ForLoop):
                lines.append(
                    f"{pad}for ({s.var} = {s.init}; {s.guard.render()}; {s.var}++) {{"
                )
                emit(s.body, depth + 1)
                lines.append(pad + "}")
            else:
                raise TypeError(f"cannot render {s!r}")
            if not isinstance(s, (IfElse, WhileLoop, ForLoop)):
                assert len(lines) == s.line, (len(lines), s)

    emit(ast.body, 1)
    lines.append("}")
    assert len(lines) == ast.line_count
    return "\n".join(lines) + "\n"


def collect_literals(ast: ProgramAst) -> set[int]:
    """All integer literals appearing in the program text."""
    found: set[int] = set()

    def walk(stmts: list) -> None:
        for s in stmts:
            if isinstance(s, ArrayDecl):
                found.add(s.length)
            elif isinstance(s, LiteralAssign):
                found.add(s.value)
            elif isinstance(s, IfElse):
                if isinstance(s.guard.rhs, int):
                    found.add(s.guard.rhs)
                walk(s.then_body)
                walk(s.else_body)
            elif isinstance(s, WhileLoop):
                if isinstance(s.guard.rhs, int):
                    found.add(s.guard.rhs)
                walk(s.body)
            elif isinstance(s, ForLoop):
                found.add(s.init)
                if isinstance(s.guard.rhs, int):
                    found.add(s.guard.rhs)
                walk(s.body)

    walk(ast.body)
    return found


# ---------------------------------------------------------------------------
# Program builder
# ---------------------------------------------------------------------------


class _Budget:
    def __init__(self, cf: int, rand: int):
        self.cf = cf
        self.rand = rand


class _Builder:
    """Assembles one program from randomly chosen write/filler templates.

    Each template ("plan") produces a contiguous chunk of statements whose
    label outcome is engineered exactly (the oracle independently re-derives
    it). Chunks are shuffled, hosted tautological writes are inserted into
    control-flow bodies afterwards, and declarations are emitted first.
    """

    MAX_RAND_ENTITIES = 2

    def __init__(self, seed: int, cfg: GenConfig):
        self.rng = random.Random(seed)
        self.cfg = cfg
        self.lo, self.hi = cfg.int_range
        ids = list(range(cfg.max_entities))
        self.rng.shuffle(ids)
        self._free = ids
        self.int_names: list[str] = []
        self.arrays: dict[str, int] = {}

    # -- entity/value helpers ------------------------------------------------

    def _alloc(self) -> str | None:
        if not self._free:
            return None
        return f"entity_{self._free.pop()}"

    def _free_count(self) -> int:
        return len(self._free)

    def _int(self, name: str) -> str:
        self.int_names.append(name)
        return name

    def _array(self, name: str, length: int) -> str:
        self.arrays[name] = length
        return name

    def _lit(self, lo: int, hi: int) -> int:
        return self.rng.randint(max(lo, self.lo), min(hi, self.hi))

    def _char(self) -> str:
        return self.rng.choice(self.cfg.write_char_set)

    def _length_and_index(self, unsafe: bool) -> tuple[int, int]:
        """Pick an array length and a literal index realizing the target."""
        if unsafe:
            length = self._lit(1, self.hi - 1)
            value = self._lit(length + 1, self.hi)
        else:
            length = self._lit(1, self.hi)
            if self.rng.random() < 0.15:
                value = length  # index == length counts as safe by convention
            else:
                value = self._lit(self.lo, length)
        return length, value

    def _length_for(self, values: list[int], unsafe: bool) -> int:
        """Pick a length so that max(values) relates to it per the target."""
        top = max(values)
        if unsafe:
            return self._lit(1, top - 1)
        return self._lit(top, self.hi)

    def _two_sided_guard(self, lhs: str) -> Guard:
        """Guard over a rand-valued lhs where both outcomes are reachable."""
        op = self.rng.choice(GUARD_OPS)
        t = self._lit(self.lo + 1, self.hi - 1)
        return Guard(lhs, op, t)

    def _write(self, arr: str, idx: str, kind: str) -> BufferWriteStmt:
        return BufferWriteStmt(arr, idx, self._char(), kind)

    # -- write plans ----------------------------------------------------------
    # Each returns (chunk, hosted_write | None). `hosted_write` is a pair
    # (assign_chunk, write_stmt) to be placed into a host slot later.

    def plan_taut(self, unsafe: bool, hosted: bool):
        arr = self._alloc()
        idx = self._alloc()
        length, value = self._length_and_index(unsafe)
        self._array(arr, length)
        self._int(idx)
        assign = LiteralAssign(idx, value)
        write = self._write(arr, idx, KIND_TAUT)
        if hosted:
            return [], ([assign], write)
        return [assign, write], None

    def plan_branch_rand(self, unsafe: bool):
        # idx = rand(); both branches of a test on idx reassign it
        arr = self._alloc()
        idx = self._alloc()
        self._int(idx)
        if unsafe:
            bad = self._lit(2, self.hi)
            other = self._lit(self.lo, self.hi)
            length = self._length_for([bad], True)
            v1, v2 = (bad, other) if self.rng.random() < 0.5 else (other, bad)
        else:
            length = self._lit(1, self.hi)
            v1 = self._lit(self.lo, length)
            v2 = self._lit(self.lo, length)
        self._array(arr, length)
        node = IfElse(self._two_sided_guard(idx),
                      [LiteralAssign(idx, v1)], [LiteralAssign(idx, v2)])
        return [RandAssign(idx), node, self._write(arr, idx, KIND_COND)], None

    def plan_branch_det(self, unsafe: bool):
        # statically decidable branch on the index itself
        arr = self._alloc()
        idx = self._alloc()
        self._int(idx)
        k = self._lit(self.lo, self.hi)
        op = self.rng.choice(GUARD_OPS)
        t = self._lit(self.lo, self.hi)
        taken_then = _eval_op(k, op, t)
        length, taken_value = self._length_and_index(unsafe)
        other_value = self._lit(self.lo, self.hi)
        self._array(arr, length)
        if taken_then:
            v1, v2 = taken_value, other_value
        else:
            v1, v2 = other_value, taken_value
        node = IfElse(Guard(idx, op, t),
                      [LiteralAssign(idx, v1)], [LiteralAssign(idx, v2)])
        return [LiteralAssign(idx, k), node, self._write(arr, idx, KIND_COND)], None

    def plan_clamp(self, unsafe: bool):
        # idx = rand(); if (idx >/>= t) idx = c;  -> values [0..t_eff] U {c}
        arr = self._alloc()
        idx = self._alloc()
        self._int(idx)
        op = self.rng.choice((">", ">="))
        t = self._lit(self.lo + 1, self.hi - 1)
        t_eff = t if op == ">" else t - 1
        if unsafe:
            if self.rng.random() < 0.5 and t_eff > 1:
                length = self._lit(1, t_eff - 1)   # pass-through range offends
                c = self._lit(self.lo, self.hi)
            else:
                length = self._lit(max(1, t_eff), self.hi - 1)
                c = self._lit(length + 1, self.hi)  # clamp target offends
        else:
            length = self._lit(max(1, t_eff), self.hi)
            c = self._lit(self.lo, length)
        self._array(arr, length)
        node = IfElse(Guard(idx, op, t), [LiteralAssign(idx, c)],
                      self._scratch_stmts())
        return [RandAssign(idx), node, self._write(arr, idx, KIND_COND)], None

    def plan_while_lit(self, unsafe: bool):
        arr = self._alloc()
        idx = self._alloc()
        self._int(idx)
        op = self.rng.choice(LOOP_OPS)
        adj = 1 if op == "<=" else 0
        use_bound_entity = self._free_count() > 1 and self.rng.random() < 0.4
        if unsafe:
            length = self._lit(1, self.hi - 1 - adj)
            if self.rng.random() < 0.5:
                a = self._lit(length + 1, self.hi)          # init offends
                t = self._lit(self.lo, self.hi - adj)
            else:
                a = self._lit(self.lo, length)
                t = self._lit(length + 1 - adj, self.hi - adj)  # bound offends
        else:
            length = self._lit(1 + adj, self.hi)
            a = self._lit(self.lo, length)
            t = self._lit(self.lo, length - adj)
        self._array(arr, length)
        chunk: list = [LiteralAssign(idx, a)]
        if use_bound_entity:
            bv = self._alloc()
            self._int(bv)
            chunk.append(LiteralAssign(bv, t))
            guard = Guard(idx, op, bv)
        else:
            guard = Guard(idx, op, t)
        chunk.append(WhileLoop(guard, [Increment(idx)]))
        chunk.append(self._write(arr, idx, KIND_COND))
        return chunk, None

    def plan_for(self, unsafe: bool):
        arr = self._alloc()
        idx = self._alloc()
        self._int(idx)
        op = self.rng.choice(LOOP_OPS)
        adj = 1 if op == "<=" else 0
        if unsafe:
            length = self._lit(1, self.hi - 1 - adj)
            a = self._lit(self.lo, self.hi)
            t = self._lit(length + 1 - adj, self.hi - adj)
            if max(a, t + adj) <= length:  # ensure the final value offends
                a = self._lit(length + 1, self.hi)
        else:
            length = self._lit(1 + adj, self.hi)
            a = self._lit(self.lo, length)
            t = self._lit(self.lo, length - adj)
        self._array(arr, length)
        node = ForLoop(idx, a, Guard(idx, op, t), [])
        return [node, self._write(arr, idx, KIND_COND)], None

    def plan_rand_direct(self, unsafe: bool):
        # rand() can exceed any in-range length, so this is always unsafe.
        arr = self._alloc()
        idx = self._alloc()
        self._int(idx)
        self._array(arr, self._lit(1, self.hi))
        return [RandAssign(idx), self._write(arr, idx, KIND_COND)], None

    def plan_while_rand(self, unsafe: bool):
        r = self._alloc()
        arr = self._alloc()
        idx = self._alloc()
        self._int(r)
        self._int(idx)
        self._array(arr, self._lit(1, self.hi))
        a = self._lit(self.lo, self.hi)
        chunk = [RandAssign(r), LiteralAssign(idx, a),
                 WhileLoop(Guard(idx, "<", r), [Increment(idx)]),
                 self._write(arr, idx, KIND_COND)]
        return chunk, None

    def plan_clamp_while(self, unsafe: bool):
        # The motivating shape: rand, if/else reassigning it, then a while
        # loop driving the index up to it.
        r = self._alloc()
        arr = self._alloc()
        idx = self._alloc()
        self._int(r)
        self._int(idx)
        if unsafe:
            bad = self._lit(2, self.hi)
            other = self._lit(self.lo, self.hi)
            length = self._length_for([bad], True)
            c1, c2 = (bad, other) if self.rng.random() < 0.5 else (other, bad)
            a = self._lit(self.lo, self.hi)
        else:
            length = self._lit(1, self.hi)
            c1 = self._lit(self.lo, length)
            c2 = self._lit(self.lo, length)
            a = self._lit(self.lo, length)
        self._array(arr, length)
        node = IfElse(self._two_sided_guard(r),
                      [LiteralAssign(r, c1)], [LiteralAssign(r, c2)])
        chunk = [RandAssign(r), node, LiteralAssign(idx, a),
                 WhileLoop(Guard(idx, "<", r), [Increment(idx)]),
                 self._write(arr, idx, KIND_COND)]
        return chunk, None

    def plan_nested(self, unsafe: bool):
        # if/else around a while loop (nesting depth 2).
        r = self._alloc()
        arr = self._alloc()
        idx = self._alloc()
        self._int(r)
        self._int(idx)
        if unsafe:
            bad = self._lit(2, self.hi)
            other = self._lit(self.lo, self.hi)
            length = self._length_for([bad], True)
            loop_val, v2 = (bad, other) if self.rng.random() < 0.5 else (other, bad)
        else:
            length = self._lit(1, self.hi)
            loop_val = self._lit(self.lo, length)
            v2 = self._lit(self.lo, length)
        self._array(arr, length)
        a = self._lit(self.lo, loop_val)
        loop = WhileLoop(Guard(idx, "<", loop_val), [Increment(idx)])
        node = IfElse(self._two_sided_guard(r), [loop], [LiteralAssign(idx, v2)])
        chunk = [LiteralAssign(idx, a), RandAssign(r), node,
                 self._write(arr, idx, KIND_COND)]
        return chunk, None

    # -- fillers ---------------------------------------------------------------

    def _scratch_stmts(self) -> list:
        # Scratch is a dedicated entity touched by nothing else; assigning
        # it first in every chunk keeps definite assignment safe under
        # chunk shuffling. Empty when no entity is left.
        name = self._scratch()
        if name is None:
            return []
        return [LiteralAssign(name, self._lit(self.lo, self.hi))]

    def _scratch(self) -> str | None:
        if not hasattr(self, "_scratch_name"):
            self._scratch_name = self._alloc()
            if self._scratch_name is not None:
                self._int(self._scratch_name)
        return self._scratch_name

    def filler_stmts(self):
        chunk = self._scratch_stmts()
        if chunk and self.rng.random() < 0.5:
            chunk.append(Increment(chunk[0].name))
        return chunk

    def filler_if(self):
        f = self._alloc()
        if f is None:
            return None
        self._int(f)
        k = self._lit(self.lo, self.hi)
        op = self.rng.choice(GUARD_OPS)
        t = self._lit(self.lo, self.hi)
        node = IfElse(Guard(f, op, t), [Increment(f)],
                      [LiteralAssign(f, self._lit(self.lo, self.hi))])
        return [LiteralAssign(f, k), node]

    def filler_while(self):
        f = self._alloc()
        if f is None:
            return None
        self._int(f)
        a = self._lit(self.lo, self.hi)
        t = self._lit(self.lo, self.hi)
        return [LiteralAssign(f, a), WhileLoop(Guard(f, "<", t), [Increment(f)])]

    def filler_for(self):
        f = self._alloc()
        if f is None:
            return None
        self._int(f)
        a = self._lit(self.lo, self.hi)
        t = self._lit(self.lo, self.hi)
        return [ForLoop(f, a, Guard(f, "<", t), [])]

    def filler_rand(self):
        f = self._alloc()
        if f is None:
            return None
        self._int(f)
        return [RandAssign(f)]

    def filler_nested(self):
        f = self._alloc()
        g = self._alloc()
        if f is None or g is None:
            return None
        self._int(f)
        self._int(g)
        loop = WhileLoop(Guard(g, "<", self._lit(self.lo, self.hi)), [Increment(g)])
        node = IfElse(Guard(f, self.rng.choice(GUARD_OPS), self._lit(self.lo, self.hi)),
                      [loop], [Increment(g)])
        return [LiteralAssign(f, self._lit(self.lo, self.hi)),
                LiteralAssign(g, self._lit(self.lo, self.hi)), node]

    # -- assembly ----------------------------------------------------------------

    def build(self) -> ProgramAst:
        rng = self.rng
        cfg = self.cfg
        n_writes = rng.randint(*cfg.writes_per_file)
        budget = _Budget(cf=rng.randint(1, cfg.max_cf_nodes),
                         rand=self.MAX_RAND_ENTITIES)

        chunks: list[list] = []
        hosted: list[tuple[list, BufferWriteStmt]] = []

        for _ in range(n_writes):
            plan = self._choose_plan(budget)
            if plan is None:
                break
            kind, func, cf_cost, rand_cost = plan
            unsafe = rng.random() < 0.5
            chunk, hosted_write = func(unsafe)
            budget.cf -= cf_cost
            budget.rand -= rand_cost
            if hosted_write is not None:
                hosted.append(hosted_write)
            else:
                chunks.append(chunk)

        while budget.cf > 0 and (rng.random() < 0.75 or not _has_cf(chunks)):
            filler = self._choose_filler(budget)
            if filler is None:
                break
            chunk, cf_cost, rand_cost = filler
            budget.cf -= cf_cost
            budget.rand -= rand_cost
            chunks.append(chunk)

        for _ in range(rng.randint(0, 2)):
            filler = self.filler_stmts()
            if filler:
                chunks.append(filler)

        rng.shuffle(chunks)

        for assign_chunk, write in hosted:
            slots = []
            for ci, chunk in enumerate(chunks):
                for slot in _host_slots(chunk):
                    slots.append((ci, slot))
            if slots:
                _, slot = rng.choice(slots)
                body, pos = slot
                body.insert(pos(), write)
                host_index = next(
                    ci for ci, chunk in enumerate(chunks)
                    if _contains_stmt(chunk, write)
                )
                chunks.insert(rng.randint(0, host_index), assign_chunk)
            else:
                chunks.insert(rng.randint(0, len(chunks)),
                              assign_chunk + [write])

        decls: list = [IntDecl(n) for n in self.int_names]
        decls += [ArrayDecl(n, ln) for n, ln in self.arrays.items()]
        rng.shuffle(decls)

        body = decls + [s for chunk in chunks for s in chunk]
        return ProgramAst(body)

    def _choose_plan(self, budget: _Budget):
        rng = self.rng
        free = self._free_count()
        taut = rng.random() < 0.45
        if taut and free >= 2:
            hosted = rng.random() < 0.5
            return (KIND_TAUT,
                    lambda unsafe, h=hosted: self.plan_taut(unsafe, h), 0, 0)
        # (function, cf cost, rand cost, entity cost, weight)
        table = [
            (self.plan_branch_rand, 1, 1, 2, 3.0),
            (self.plan_branch_det, 1, 0, 2, 2.0),
            (self.plan_clamp, 1, 1, 2, 3.0),
            (self.plan_while_lit, 1, 0, 2, 3.0),
            (self.plan_for, 1, 0, 2, 2.0),
            (self.plan_rand_direct, 0, 1, 2, 1.0),
            (self.plan_while_rand, 1, 1, 3, 1.0),
            (self.plan_clamp_while, 2, 1, 3, 1.5),
            (self.plan_nested, 2, 1, 3, 1.5),
        ]
        if self.cfg.max_nesting < 2:
            table = [t for t in table if t[0] is not self.plan_nested]
        viable = [t for t in table
                  if t[1] <= budget.cf and t[2] <= budget.rand and t[3] <= free]
        if not viable:
            if free >= 2:
                return (KIND_TAUT, lambda unsafe: self.plan_taut(unsafe, False), 0, 0)
            return None
        funcs = [t[0] for t in viable]
        weights = [t[4] for t in viable]
        func = rng.choices(funcs, weights)[0]
        _, cf_cost, rand_cost, _, _ = next(t for t in viable if t[0] is func)
        return (KIND_COND, func, cf_cost, rand_cost)

    def _choose_filler(self, budget: _Budget):
        rng = self.rng
        table = [
            (self.filler_if, 1, 0, 3.0),
            (self.filler_while, 1, 0, 3.0),
            (self.filler_for, 1, 0, 2.0),
            (self.filler_nested, 2, 0, 1.0),
        ]
        if budget.rand > 0 and rng.random() < 0.15:
            table.append((self.filler_rand, 0, 1, 1.0))
        viable = [t for t in table if t[1] <= budget.cf]
        if self.cfg.max_nesting < 2:
            viable = [t for t in viable if t[0] is not self.filler_nested]
        if not viable:
            return None
        funcs = [t[0] for t in viable]
        weights = [t[3] for t in viable]
        func = rng.choices(funcs, weights)[0]
        chunk = func()
        if chunk is None:
            return None
        _, cf_cost, rand_cost, _ = next(t for t in viable if t[0] is func)
        return chunk, cf_cost, rand_cost


def _eval_op(a: int, op: str, b: int) -> bool:
    return {
        "<": a < b, "<=": a <= b, ">": a > b,
        ">=": a >= b, "==": a == b, "!=": a != b,
    }[op]


def _has_cf(chunks: list[list]) -> bool:
    return any(isinstance(s, (IfElse, WhileLoop, ForLoop))
               for chunk in chunks for s in chunk)


def _host_slots(stmts: list):
    """Insertion slots for hosted writes inside control-flow bodies."""
    slots = []
    for s in stmts:
        if isinstance(s, IfElse):
            slots.append((s.then_body, lambda b=s.then_body: len(b)))
            slots.append((s.else_body, lambda b=s.else_body: len(b)))
            slots.extend(_host_slots(s.then_body))
            slots.extend(_host_slots(s.else_body))
        elif isinstance(s, WhileLoop):
            # keep the guard increment as the last statement of the body
            slots.append((s.body, lambda b=s.body: len(b) - 1))
            slots.extend(_host_slots(s.body))
        elif isinstance(s, ForLoop):
            slots.append((s.body, lambda b=s.body: len(b)))
            slots.extend(_host_slots(s.body))
    return slots


def _contains_stmt(stmts: list, target) -> bool:
    for s in stmts:
        if s is target:
            return True
        if isinstance(s, IfElse):
            if _contains_stmt(s.then_body, target) or _contains_stmt(s.else_body, target):
                return True
        elif isinstance(s, (WhileLoop, ForLoop)):
            if _contains_stmt(s.body, target):
                return True
    return False


def generate_program(seed: int, cfg: GenConfig) -> ProgramAst:
    """Generate one program; a pure function of (seed, cfg)."""
    cfg.validate()
    return _Builder(seed, cfg).build()


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

MANIFEST_SCHEMA_VERSION = 1
HASH_PREFIX_LEN = 10
_DUP_RETRIES = 32


@dataclass(frozen=True)
class WriteRecord:
    line: int
    array: str
    array_len: int
    index_entity: str
    structural_kind: str
    safety: str       # "SAFE" | "UNSAFE"
    reachable: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ManifestEntry:
    file: str
    content_hash: str
    line_count: int
    labels: tuple          # one label string per line
    writes: tuple          # tuple[WriteRecord]

    def to_dict(self) -> dict:
        return {
            "file": self.file,
            "content_hash": self.content_hash,
            "line_count": self.line_count,
            "labels": list(self.labels),
            "writes": [w.to_dict() for w in self.writes],
        }

    @staticmethod
    def from_dict(d: dict) -> "ManifestEntry":
        return ManifestEntry(
            file=d["file"],
            content_hash=d["content_hash"],
            line_count=int(d["line_count"]),
            labels=tuple(d["labels"]),
            writes=tuple(WriteRecord(
                line=int(w["line"]), array=w["array"], array_len=int(w["array_len"]),
                index_entity=w["index_entity"], structural_kind=w["structural_kind"],
                safety=w["safety"], reachable=bool(w["reachable"]),
            ) for w in d["writes"]),
        )


@dataclass
class DatasetManifest:
    gen_config: GenConfig
    entries: list
    schema_version: int = MANIFEST_SCHEMA_VERSION
    generator_version: str = GENERATOR_VERSION

    def to_json(self) -> str:
        doc = {
            "schema_version": self.schema_version,
            "generator_version": self.generator_version,
            "gen_config": self.gen_config.to_dict(),
            "entries": [e.to_dict() for e in self.entries],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @staticmethod
    def load(path: Path | str) -> "DatasetManifest":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return DatasetManifest(
            gen_config=GenConfig.from_dict(doc["gen_config"]),
            entries=[ManifestEntry.from_dict(e) for e in doc["entries"]],
            schema_version=int(doc["schema_version"]),
            generator_version=str(doc["generator_version"]),
        )


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _build_entry(seed: int, cfg: GenConfig):
    """Generate, label, and render one file. Returns (text, entry)."""
    from . import oracle  # deferred: oracle imports this module's AST types

    ast = generate_program(seed, cfg)
    labels = oracle.label_lines(ast)
    classifications = oracle.classify_writes(ast)
    text = render_c(ast)
    digest = content_hash(text)
    writes = tuple(
        WriteRecord(
            line=w.line, array=w.array, array_len=w.array_len,
            index_entity=w.index_entity, structural_kind=c.structural_kind,
            safety=c.safety, reachable=c.reachable,
        )
        for w, c in zip(ast.writes, classifications)
    )
    entry = ManifestEntry(
        file=digest[:HASH_PREFIX_LEN] + ".c",
        content_hash=digest,
        line_count=ast.line_count,
        labels=tuple(labels),
        writes=writes,
    )
    return text, entry


def _entry_for_index(cfg: GenConfig, index: int, retry: int = 0):
    return _build_entry(derive_seed(cfg.seed, "file", index, retry), cfg)


def generate_dataset(cfg: GenConfig, out_dir: Path | str, jobs: int = 1) -> DatasetManifest:
    """Generate cfg.file_count labeled source files plus a manifest.

    Files are written under ``<out_dir>/src/<hash-prefix>.c`` and the
    manifest to ``<out_dir>/manifest.json``. Per-file seeds derive from
    (cfg.seed, index), so generation parallelizes and reproduces exactly.
    Hash collisions (duplicate programs) are regenerated with a perturbed
    per-file seed, keeping the earlier occurrence.
    """
    cfg.validate()
    out = Path(out_dir)
    src = out / "src"
    src.mkdir(parents=True, exist_ok=True)

    first_pass: dict[int, tuple] = {}
    if jobs > 1 and cfg.file_count > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_entry_for_index, [cfg] * cfg.file_count,
                               range(cfg.file_count), chunksize=64)
            for index, res in enumerate(results):
                first_pass[index] = res
    else:
        for index in range(cfg.file_count):
            first_pass[index] = _entry_for_index(cfg, index)

    entries: list[ManifestEntry] = []
    texts: list[str] = []
    seen: set[str] = set()
    for index in range(cfg.file_count):
        text, entry = first_pass[index]
        retry = 0
        while entry.content_hash in seen:
            retry += 1
            if retry > _DUP_RETRIES:
                raise GenerationError(
                    f"could not produce a unique program for index {index}"
                )
            text, entry = _entry_for_index(cfg, index, retry)
        seen.add(entry.content_hash)
        entries.append(entry)
        texts.append(text)

    manifest = DatasetManifest(gen_config=cfg, entries=entries)
    written: list[Path] = []
    try:
        for entry, text in zip(entries, texts):
            path = src / entry.file
            path.write_text(text, encoding="utf-8")
            written.append(path)
        manifest.save(out / "manifest.json")
    except OSError:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return manifest


def split_dataset(manifest: DatasetManifest, fractions: tuple[float, float, float],
                  seed: int) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Partition by file into train/val/test using largest-remainder sizing."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    if any(f < 0 for f in fractions):
        raise ConfigError(f"fractions must be non-negative, got {fractions}")
    n = len(manifest.entries)
    quotas = [f * n for f in fractions]
    sizes = [int(q) for q in quotas]
    remainders = sorted(
        range(len(fractions)),
        key=lambda i: (-(quotas[i] - sizes[i]), i),
    )
    for i in range(n - sum(sizes)):
        sizes[remainders[i % len(sizes)]] += 1

    order = list(range(n))
    random.Random(seed).shuffle(order)
    out = []
    start = 0
    for size in sizes:
        picked = sorted(order[start:start + size])
        out.append(DatasetManifest(
            gen_config=manifest.gen_config,
            entries=[manifest.entries[i] for i in picked],
            schema_version=manifest.schema_version,
            generator_version=manifest.generator_version,
        ))
        start += size
    return out[0], out[1], out[2]
