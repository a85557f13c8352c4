"""Clause-level decomposition used for order-insensitive query comparison."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

from . import ast as A
from .printer import serialize, serialize_source

_VALUE = A.Literal("value", "value")
_COMMUTATIVE = {"=": "=", "!=": "!=", "<>": "!="}
_JOIN_KINDS = {"INNER JOIN": "JOIN", "LEFT OUTER JOIN": "LEFT JOIN"}


@dataclass(frozen=True)
class ComponentSet:
    select_items: tuple[str, ...]
    distinct: bool
    from_tables: tuple[str, ...]
    join_kinds: tuple[str, ...]
    join_conditions: tuple[str, ...]
    where_conjuncts: tuple[str, ...]
    group_by_keys: tuple[str, ...]
    having_conjuncts: tuple[str, ...]
    order_by_keys: tuple[str, ...]  # order is significant
    limit_value: Optional[str]
    set_op_kind: Optional[str] = None
    set_op_arm: Optional["ComponentSet"] = None


class _Scope:
    def __init__(self, select: A.Select, parent: Optional["_Scope"]):
        self.parent = parent
        self.names: dict[str, str] = {}  # alias or table name -> canonical qualifier
        self.sole: Optional[str] = None
        sources = select.from_.sources if select.from_ else []
        derived = 0
        for src in sources:
            if isinstance(src, A.TableRef):
                canon = src.name.key
                self.names.setdefault(canon, canon)
            else:
                derived += 1
                canon = f"derived{derived}"
            if src.alias is not None:
                self.names[src.alias.key] = canon
        if len(sources) == 1 and isinstance(sources[0], A.TableRef):
            self.sole = sources[0].name.key
        self.select_aliases = {
            item.alias.key: item.expr for item in select.items if item.alias is not None
        }

    def qualifier(self, name: str) -> str:
        scope = self
        while scope is not None:
            if name in scope.names:
                return scope.names[name]
            scope = scope.parent
        return name


class _Canonicalizer:
    def __init__(self, drop_values: bool):
        self.drop_values = drop_values

    def ident(self, ident: A.Identifier) -> A.Identifier:
        return A.Identifier(ident.key)

    def expr(self, e: A.Expr, scope: _Scope, aliases: bool = False) -> A.Expr:
        if isinstance(e, A.ColumnRef):
            if e.table is None:
                if aliases and e.column.key in scope.select_aliases:
                    return self.expr(scope.select_aliases[e.column.key], scope)
                table = scope.sole
            else:
                table = scope.qualifier(e.table.key)
            return A.ColumnRef(self.ident(e.column), A.Identifier(table) if table else None)
        if isinstance(e, A.Star):
            if e.table is None:
                return e
            return A.Star(A.Identifier(scope.qualifier(e.table.key)))
        if isinstance(e, A.Literal):
            return _VALUE if self.drop_values and e.kind != "null" else e
        sub = lambda x: self.expr(x, scope, aliases)  # noqa: E731
        if isinstance(e, A.Aggregate):
            return A.Aggregate(e.func, sub(e.arg), e.distinct)
        if isinstance(e, A.FuncCall):
            return A.FuncCall(e.name.lower(), tuple(sub(a) for a in e.args))
        if isinstance(e, A.BinaryOp):
            return A.BinaryOp(e.op, sub(e.left), sub(e.right))
        if isinstance(e, A.Negate):
            return A.Negate(sub(e.operand))
        if isinstance(e, A.Compare):
            left, right = sub(e.left), sub(e.right)
            op = _COMMUTATIVE.get(e.op, e.op)
            if op in ("=", "!=") and serialize(right) < serialize(left):
                left, right = right, left
            return A.Compare(op, left, right)
        if isinstance(e, A.Like):
            return A.Like(sub(e.expr), sub(e.pattern), e.negated)
        if isinstance(e, A.InList):
            items = sorted((sub(i) for i in e.items), key=serialize)
            return A.InList(sub(e.expr), tuple(items), e.negated)
        if isinstance(e, A.InQuery):
            return A.InQuery(sub(e.expr), self.query(e.query, scope), e.negated)
        if isinstance(e, A.Between):
            return A.Between(sub(e.expr), sub(e.low), sub(e.high), e.negated)
        if isinstance(e, A.IsNull):
            return A.IsNull(sub(e.expr), e.negated)
        if isinstance(e, A.Exists):
            return A.Exists(self.query(e.query, scope), e.negated)
        if isinstance(e, A.Not):
            return A.Not(sub(e.operand))
        if isinstance(e, A.BoolOp):
            ops = sorted((sub(o) for o in e.operands), key=serialize)
            return A.BoolOp(e.op, tuple(ops))
        if isinstance(e, A.Subquery):
            return A.Subquery(self.query(e.query, scope))
        raise TypeError(f"not an expression node: {e!r}")

    def source(self, s: A.Source, scope: _Scope) -> A.Source:
        if isinstance(s, A.TableRef):
            return A.TableRef(self.ident(s.name))
        return A.DerivedTable(self.query(s.query, scope.parent))

    def select(self, s: A.Select, parent: Optional[_Scope]) -> A.Select:
        scope = _Scope(s, parent)
        from_ = None
        if s.from_ is not None:
            joins = tuple(
                A.Join(
                    _JOIN_KINDS.get(j.kind, j.kind),
                    self.source(j.source, scope),
                    self.expr(j.on, scope) if j.on is not None else None,
                )
                for j in s.from_.joins
            )
            from_ = A.FromClause(self.source(s.from_.first, scope), joins)
        ex = lambda e: self.expr(e, scope)  # noqa: E731
        return A.Select(
            items=tuple(A.SelectItem(ex(i.expr)) for i in s.items),
            from_=from_,
            where=ex(s.where) if s.where is not None else None,
            group_by=tuple(self.expr(g, scope, aliases=True) for g in s.group_by),
            having=self.expr(s.having, scope, aliases=True) if s.having is not None else None,
            order_by=tuple(
                A.OrderItem(self.expr(o.expr, scope, aliases=True), o.direction or "ASC")
                for o in s.order_by
            ),
            limit=s.limit,
            distinct=s.distinct,
        )

    def query(self, q: A.Query, parent: Optional[_Scope] = None) -> A.Query:
        if isinstance(q, A.SetOp):
            return A.SetOp(q.op, self.select(q.left, parent), self.query(q.right, parent))
        return self.select(q, parent)


def canonicalize(query: A.Query, drop_values: bool = False) -> A.Query:
    """Resolve aliases, casefold identifiers and sort commutative operands."""
    return _Canonicalizer(drop_values).query(query)


def _conjuncts(e: Optional[A.Expr]) -> list[str]:
    if e is None:
        return []
    parts = e.operands if isinstance(e, A.BoolOp) and e.op == "AND" else (e,)
    return sorted(serialize(p) for p in parts)


def _decompose_canonical(q: A.Query) -> ComponentSet:
    if isinstance(q, A.SetOp):
        head = _decompose_canonical(q.left)
        return dataclasses.replace(
            head, set_op_kind=q.op, set_op_arm=_decompose_canonical(q.right)
        )
    s = q
    sources = s.from_.sources if s.from_ else []
    joins = s.from_.joins if s.from_ else ()
    join_conds: list[str] = []
    for j in joins:
        join_conds.extend(_conjuncts(j.on))
    return ComponentSet(
        select_items=tuple(sorted(serialize(i.expr) for i in s.items)),
        distinct=s.distinct,
        from_tables=tuple(sorted(serialize_source(src) for src in sources)),
        join_kinds=tuple(sorted(j.kind for j in joins if j.kind not in (",", "JOIN"))),
        join_conditions=tuple(sorted(join_conds)),
        where_conjuncts=tuple(_conjuncts(s.where)),
        group_by_keys=tuple(sorted(serialize(g) for g in s.group_by)),
        having_conjuncts=tuple(_conjuncts(s.having)),
        order_by_keys=tuple(f"{serialize(o.expr)} {o.direction}" for o in s.order_by),
        limit_value=s.limit,
    )


def decompose(query: A.Query, drop_values: bool = False) -> ComponentSet:
    """Break a query into normalized per-clause multisets."""
    return _decompose_canonical(canonicalize(query, drop_values))
