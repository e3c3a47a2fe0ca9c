"""Hand-built example programs used by tests and documentation."""

from __future__ import annotations

from .codegen import (
    ArrayDecl,
    BufferWriteStmt,
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
)


def motivating_example() -> ProgramAst:
    """The two-write showcase program.

    An unknown value steers an if/else that reassigns it, a while loop
    drives ``entity_4`` up to it, and the buffer write on line 20 is unsafe
    only once that control flow is resolved (index 69 against length 11 on
    the else path, 42 on the then path). The write on line 22 is unsafe by
    plain value lookup: ``entity_9`` is 77, ``entity_7`` has length 13.

    Renders to 23 lines with the conditional write on line 20 and the
    tautological write on line 22.
    """
    body = [
        IntDecl("entity_3"),                       # line 3
        IntDecl("entity_4"),                       # line 4
        ArrayDecl("entity_8", 11),                 # line 5
        IntDecl("entity_9"),                       # line 6
        ArrayDecl("entity_7", 13),                 # line 7
        IntDecl("entity_5"),                       # line 8
        RandAssign("entity_3"),                    # line 9
        LiteralAssign("entity_4", 42),             # line 10
        IfElse(Guard("entity_3", "<", 50),         # line 11
               [LiteralAssign("entity_3", 7)],     # line 12
               [LiteralAssign("entity_3", 69)]),   # lines 13-15
        WhileLoop(Guard("entity_4", "<", "entity_3"),   # line 16
                  [Increment("entity_4")]),        # lines 17-18
        LiteralAssign("entity_9", 77),             # line 19
        BufferWriteStmt("entity_8", "entity_4", "x", KIND_COND),   # line 20
        LiteralAssign("entity_5", 1),              # line 21
        BufferWriteStmt("entity_7", "entity_9", "f", KIND_TAUT),   # line 22
    ]
    ast = ProgramAst(body)
    assert ast.line_count == 23
    assert [w.line for w in ast.writes] == [20, 22]
    return ast
