"""Parse tree for the Spider SELECT subset.

Nodes are frozen dataclasses compared structurally. Token positions recorded
by the parser (``*_tok`` fields) are excluded from comparison so a parsed
tree equals a hand-built one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

AGGREGATE_FUNCS = ("count", "sum", "avg", "min", "max")


def _tok():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Identifier:
    name: str
    quoted: bool = False

    @property
    def key(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ColumnRef:
    column: Identifier
    table: Optional[Identifier] = None
    column_tok: Optional[int] = _tok()
    table_tok: Optional[int] = _tok()


@dataclass(frozen=True)
class Star:
    table: Optional[Identifier] = None
    table_tok: Optional[int] = _tok()


@dataclass(frozen=True)
class Literal:
    kind: str  # "number" | "string" | "null"
    text: str  # verbatim source text, quotes included


@dataclass(frozen=True)
class Aggregate:
    func: str  # lowercase, one of AGGREGATE_FUNCS
    arg: "Expr"
    distinct: bool = False


@dataclass(frozen=True)
class FuncCall:
    name: str
    args: tuple["Expr", ...] = ()


@dataclass(frozen=True)
class BinaryOp:
    op: str  # + - * / % ||
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Negate:
    operand: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str  # = != <> < <= > >=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Like:
    expr: "Expr"
    pattern: "Expr"
    negated: bool = False


@dataclass(frozen=True)
class InList:
    expr: "Expr"
    items: tuple["Expr", ...]
    negated: bool = False


@dataclass(frozen=True)
class InQuery:
    expr: "Expr"
    query: "Query"
    negated: bool = False


@dataclass(frozen=True)
class Between:
    expr: "Expr"
    low: "Expr"
    high: "Expr"
    negated: bool = False


@dataclass(frozen=True)
class IsNull:
    expr: "Expr"
    negated: bool = False


@dataclass(frozen=True)
class Exists:
    query: "Query"
    negated: bool = False


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class BoolOp:
    """n-ary AND/OR. Operands never share the node's own operator."""

    op: str  # AND | OR
    operands: tuple["Expr", ...]


@dataclass(frozen=True)
class Subquery:
    query: "Query"


Expr = Union[
    ColumnRef, Star, Literal, Aggregate, FuncCall, BinaryOp, Negate, Compare, Like,
    InList, InQuery, Between, IsNull, Exists, Not, BoolOp, Subquery,
]


@dataclass(frozen=True)
class SelectItem:
    expr: Expr
    alias: Optional[Identifier] = None


@dataclass(frozen=True)
class TableRef:
    name: Identifier
    alias: Optional[Identifier] = None
    name_tok: Optional[int] = _tok()


@dataclass(frozen=True)
class DerivedTable:
    query: "Query"
    alias: Optional[Identifier] = None


Source = Union[TableRef, DerivedTable]


@dataclass(frozen=True)
class Join:
    kind: str  # "JOIN", "INNER JOIN", "LEFT JOIN", "LEFT OUTER JOIN", "CROSS JOIN" or ","
    source: Source
    on: Optional[Expr] = None


@dataclass(frozen=True)
class FromClause:
    first: Source
    joins: tuple[Join, ...] = ()

    @property
    def sources(self) -> list[Source]:
        return [self.first, *(j.source for j in self.joins)]


@dataclass(frozen=True)
class OrderItem:
    expr: Expr
    direction: Optional[str] = None  # None | "ASC" | "DESC"


@dataclass(frozen=True)
class Select:
    items: tuple[SelectItem, ...]
    from_: Optional[FromClause] = None
    where: Optional[Expr] = None
    group_by: tuple[Expr, ...] = ()
    having: Optional[Expr] = None
    order_by: tuple[OrderItem, ...] = ()
    limit: Optional[str] = None
    distinct: bool = False


@dataclass(frozen=True)
class SetOp:
    """``left <op> right``; chains nest to the right as in Spider."""

    op: str  # UNION | UNION ALL | INTERSECT | EXCEPT
    left: Select
    right: "Query"


Query = Union[Select, SetOp]


def arms(query: Query) -> list[Select]:
    """Flatten a set-operation chain into its SELECT arms, left to right."""
    out = []
    while isinstance(query, SetOp):
        out.append(query.left)
        query = query.right
    out.append(query)
    return out


def last_arm(query: Query) -> Select:
    return arms(query)[-1]
