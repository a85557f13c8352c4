"""Canonical single-line SQL output.

Keywords come out uppercase, aggregates lowercase, identifiers as stored
(or casefolded with ``fold_case``). Parentheses are emitted only where
precedence needs them, so ``parse(serialize(t)) == t``.
"""

from __future__ import annotations

from . import ast as A

_PREDICATES = (A.Compare, A.Like, A.InList, A.InQuery, A.Between, A.IsNull, A.Exists)


def _level(e: A.Expr) -> int:
    if isinstance(e, A.BoolOp):
        return 1 if e.op == "OR" else 2
    if isinstance(e, A.Not):
        return 3
    if isinstance(e, _PREDICATES):
        return 4
    if isinstance(e, A.BinaryOp):
        return 5 if e.op in ("+", "-", "||") else 6
    if isinstance(e, A.Negate):
        return 7
    return 8


class _Printer:
    def __init__(self, fold_case: bool):
        self.fold = fold_case

    def ident(self, ident: A.Identifier) -> str:
        name = ident.name.lower() if self.fold else ident.name
        if ident.quoted:
            return '"' + name.replace('"', '""') + '"'
        return name

    def expr(self, e: A.Expr, min_level: int = 1) -> str:
        text = self.render(e)
        return f"({text})" if _level(e) < min_level else text

    def render(self, e: A.Expr) -> str:
        if isinstance(e, A.ColumnRef):
            col = self.ident(e.column)
            return f"{self.ident(e.table)}.{col}" if e.table else col
        if isinstance(e, A.Star):
            return f"{self.ident(e.table)}.*" if e.table else "*"
        if isinstance(e, A.Literal):
            return e.text
        if isinstance(e, A.Aggregate):
            inner = ("DISTINCT " if e.distinct else "") + self.expr(e.arg)
            return f"{e.func}({inner})"
        if isinstance(e, A.FuncCall):
            name = e.name.lower() if self.fold else e.name
            return f"{name}({', '.join(self.expr(a) for a in e.args)})"
        if isinstance(e, A.BinaryOp):
            lvl = _level(e)
            return f"{self.expr(e.left, lvl)} {e.op} {self.expr(e.right, lvl + 1)}"
        if isinstance(e, A.Negate):
            inner = self.expr(e.operand, 7)
            # "--" would start a comment in most engines
            return f"-({inner})" if inner.startswith("-") else f"-{inner}"
        if isinstance(e, A.Compare):
            return f"{self.expr(e.left, 5)} {e.op} {self.expr(e.right, 5)}"
        if isinstance(e, A.Like):
            return f"{self.expr(e.expr, 5)} {self._not(e)}LIKE {self.expr(e.pattern, 5)}"
        if isinstance(e, A.InList):
            items = ", ".join(self.expr(i) for i in e.items)
            return f"{self.expr(e.expr, 5)} {self._not(e)}IN ({items})"
        if isinstance(e, A.InQuery):
            return f"{self.expr(e.expr, 5)} {self._not(e)}IN ({self.query(e.query)})"
        if isinstance(e, A.Between):
            return (
                f"{self.expr(e.expr, 5)} {self._not(e)}BETWEEN "
                f"{self.expr(e.low, 5)} AND {self.expr(e.high, 5)}"
            )
        if isinstance(e, A.IsNull):
            return f"{self.expr(e.expr, 5)} IS {'NOT ' if e.negated else ''}NULL"
        if isinstance(e, A.Exists):
            return f"{self._not(e)}EXISTS ({self.query(e.query)})"
        if isinstance(e, A.Not):
            return f"NOT {self.expr(e.operand, 3)}"
        if isinstance(e, A.BoolOp):
            lvl = _level(e) + 1
            return f" {e.op} ".join(self.expr(o, lvl) for o in e.operands)
        if isinstance(e, A.Subquery):
            return f"({self.query(e.query)})"
        raise TypeError(f"not an expression node: {e!r}")

    @staticmethod
    def _not(e) -> str:
        return "NOT " if e.negated else ""

    def source(self, s: A.Source) -> str:
        if isinstance(s, A.TableRef):
            text = self.ident(s.name)
        else:
            text = f"({self.query(s.query)})"
        if s.alias is not None:
            text += f" AS {self.ident(s.alias)}"
        return text

    def select(self, s: A.Select) -> str:
        parts = ["SELECT DISTINCT" if s.distinct else "SELECT"]
        items = []
        for item in s.items:
            text = self.expr(item.expr)
            if item.alias is not None:
                text += f" AS {self.ident(item.alias)}"
            items.append(text)
        parts.append(", ".join(items))
        if s.from_ is not None:
            text = "FROM " + self.source(s.from_.first)
            for join in s.from_.joins:
                if join.kind == ",":
                    text += ", " + self.source(join.source)
                else:
                    text += f" {join.kind} {self.source(join.source)}"
                if join.on is not None:
                    text += f" ON {self.expr(join.on)}"
            parts.append(text)
        if s.where is not None:
            parts.append("WHERE " + self.expr(s.where))
        if s.group_by:
            parts.append("GROUP BY " + ", ".join(self.expr(g) for g in s.group_by))
        if s.having is not None:
            parts.append("HAVING " + self.expr(s.having))
        if s.order_by:
            keys = []
            for o in s.order_by:
                keys.append(self.expr(o.expr) + (f" {o.direction}" if o.direction else ""))
            parts.append("ORDER BY " + ", ".join(keys))
        if s.limit is not None:
            parts.append(f"LIMIT {s.limit}")
        return " ".join(parts)

    def query(self, q: A.Query) -> str:
        if isinstance(q, A.SetOp):
            return f"{self.select(q.left)} {q.op} {self.query(q.right)}"
        return self.select(q)


def serialize(node, fold_case: bool = False) -> str:
    """Render a query (or a lone expression) as canonical SQL text."""
    printer = _Printer(fold_case)
    if isinstance(node, (A.Select, A.SetOp)):
        return printer.query(node)
    return printer.expr(node)


def serialize_source(source: A.Source, fold_case: bool = False) -> str:
    return _Printer(fold_case).source(source)
