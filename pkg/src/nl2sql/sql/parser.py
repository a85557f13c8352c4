"""Recursive-descent parser for the Spider SELECT subset."""

from __future__ import annotations

from typing import Optional

from . import ast as A
from .tokens import AGGREGATES, SqlToken, TokenKind, tokenize

K = TokenKind

COMPARE_OPS = ("=", "!=", "<>", "<", "<=", ">", ">=")
SET_OPS = ("UNION", "INTERSECT", "EXCEPT")
JOIN_STARTS = ("JOIN", "INNER", "LEFT", "CROSS")


class SqlSyntaxError(ValueError):
    def __init__(self, message: str, token_index: int, expected: tuple[str, ...] = ()):
        text = f"{message} at token {token_index}"
        if expected:
            text += f" (expected one of: {', '.join(expected)})"
        super().__init__(text)
        self.token_index = token_index
        self.expected = expected


def _identifier(tok: SqlToken) -> A.Identifier:
    if tok.kind is K.QUOTED_IDENTIFIER:
        return A.Identifier(tok.text[1:-1].replace('""', '"'), quoted=True)
    return A.Identifier(tok.text)


class _Parser:
    def __init__(self, tokens: list[SqlToken]):
        self.toks = tokens
        self.i = 0

    # -- token helpers

    def peek(self, offset: int = 0) -> Optional[SqlToken]:
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def at_kw(self, *words: str, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok is not None and tok.is_kw(*words)

    def at_sym(self, *syms: str, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok is not None and tok.kind in (K.OPERATOR, K.PUNCTUATION) and tok.text in syms

    def at_name(self, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok is not None and tok.kind in (K.IDENTIFIER, K.QUOTED_IDENTIFIER)

    def fail(self, message: str, expected: tuple[str, ...] = ()):
        raise SqlSyntaxError(message, self.i, expected)

    def advance(self) -> SqlToken:
        tok = self.peek()
        if tok is None:
            self.fail("unexpected end of input")
        self.i += 1
        return tok

    def accept_kw(self, word: str) -> bool:
        if self.at_kw(word):
            self.i += 1
            return True
        return False

    def accept_sym(self, sym: str) -> bool:
        if self.at_sym(sym):
            self.i += 1
            return True
        return False

    def expect_kw(self, word: str) -> None:
        if not self.accept_kw(word):
            self.fail(f"expected {word}", (word,))

    def expect_sym(self, sym: str) -> None:
        if not self.accept_sym(sym):
            self.fail(f"expected {sym!r}", (sym,))

    def name(self) -> tuple[A.Identifier, int]:
        if not self.at_name():
            self.fail("expected identifier", ("identifier",))
        idx = self.i
        return _identifier(self.advance()), idx

    def alias(self) -> Optional[A.Identifier]:
        if self.accept_kw("AS"):
            return self.name()[0]
        if self.at_name():
            return self.name()[0]
        return None

    # -- statements

    def query(self) -> A.Query:
        left = self.select()
        if self.at_kw(*SET_OPS):
            op = self.advance().upper
            if op == "UNION" and self.accept_kw("ALL"):
                op = "UNION ALL"
            return A.SetOp(op, left, self.query())
        return left

    def select(self) -> A.Select:
        self.expect_kw("SELECT")
        distinct = self.accept_kw("DISTINCT")
        items = [self.select_item()]
        while self.accept_sym(","):
            items.append(self.select_item())
        from_ = where = having = limit = None
        group_by: list = []
        order_by: list = []
        if self.accept_kw("FROM"):
            from_ = self.from_clause()
        if self.accept_kw("WHERE"):
            where = self.expr()
        if self.accept_kw("GROUP"):
            self.expect_kw("BY")
            group_by = self.expr_list()
        if self.accept_kw("HAVING"):
            having = self.expr()
        if self.accept_kw("ORDER"):
            self.expect_kw("BY")
            order_by = [self.order_item()]
            while self.accept_sym(","):
                order_by.append(self.order_item())
        if self.accept_kw("LIMIT"):
            tok = self.peek()
            if tok is None or tok.kind is not K.NUMBER_LITERAL:
                self.fail("expected number after LIMIT", ("number",))
            limit = self.advance().text
        return A.Select(
            tuple(items), from_, where, tuple(group_by), having, tuple(order_by), limit, distinct
        )

    def select_item(self) -> A.SelectItem:
        return A.SelectItem(self.expr(), self.alias())

    def order_item(self) -> A.OrderItem:
        expr = self.expr()
        direction = None
        if self.at_kw("ASC", "DESC"):
            direction = self.advance().upper
        return A.OrderItem(expr, direction)

    def expr_list(self) -> list:
        out = [self.expr()]
        while self.accept_sym(","):
            out.append(self.expr())
        return out

    def from_clause(self) -> A.FromClause:
        first = self.source()
        joins = []
        while True:
            if self.accept_sym(","):
                joins.append(A.Join(",", self.source()))
                continue
            if not self.at_kw(*JOIN_STARTS):
                break
            words = [self.advance().upper]
            if words[0] == "LEFT" and self.at_kw("OUTER"):
                words.append(self.advance().upper)
            if words[0] != "JOIN":
                self.expect_kw("JOIN")
                words.append("JOIN")
            source = self.source()
            on = self.expr() if self.accept_kw("ON") else None
            joins.append(A.Join(" ".join(words), source, on))
        return A.FromClause(first, tuple(joins))

    def source(self) -> A.Source:
        if self.accept_sym("("):
            query = self.query()
            self.expect_sym(")")
            return A.DerivedTable(query, self.alias())
        name, idx = self.name()
        return A.TableRef(name, self.alias(), name_tok=idx)

    # -- expressions, lowest precedence first

    def expr(self) -> A.Expr:
        return self.bool_chain("OR", self.and_expr)

    def and_expr(self) -> A.Expr:
        return self.bool_chain("AND", self.not_expr)

    def bool_chain(self, op: str, operand) -> A.Expr:
        parts = [operand()]
        while self.accept_kw(op):
            parts.append(operand())
        if len(parts) == 1:
            return parts[0]
        flat = []
        for part in parts:
            if isinstance(part, A.BoolOp) and part.op == op:
                flat.extend(part.operands)
            else:
                flat.append(part)
        return A.BoolOp(op, tuple(flat))

    def not_expr(self) -> A.Expr:
        if self.accept_kw("NOT"):
            if self.at_kw("EXISTS"):
                return self.exists(negated=True)
            return A.Not(self.not_expr())
        return self.predicate()

    def exists(self, negated: bool) -> A.Exists:
        self.expect_kw("EXISTS")
        self.expect_sym("(")
        query = self.query()
        self.expect_sym(")")
        return A.Exists(query, negated)

    def predicate(self) -> A.Expr:
        if self.at_kw("EXISTS"):
            return self.exists(negated=False)
        left = self.additive()
        if self.at_sym(*COMPARE_OPS):
            op = self.advance().text
            return A.Compare(op, left, self.additive())
        negated = False
        if self.at_kw("NOT") and self.at_kw("IN", "LIKE", "BETWEEN", offset=1):
            self.i += 1
            negated = True
        if self.accept_kw("IN"):
            self.expect_sym("(")
            if self.at_kw("SELECT"):
                node = A.InQuery(left, self.query(), negated)
            else:
                node = A.InList(left, tuple(self.expr_list()), negated)
            self.expect_sym(")")
            return node
        if self.accept_kw("LIKE"):
            return A.Like(left, self.additive(), negated)
        if self.accept_kw("BETWEEN"):
            low = self.additive()
            self.expect_kw("AND")
            return A.Between(left, low, self.additive(), negated)
        if self.accept_kw("IS"):
            neg = self.accept_kw("NOT")
            self.expect_kw("NULL")
            return A.IsNull(left, neg)
        return left

    def additive(self) -> A.Expr:
        left = self.multiplicative()
        while self.at_sym("+", "-", "||"):
            op = self.advance().text
            left = A.BinaryOp(op, left, self.multiplicative())
        return left

    def multiplicative(self) -> A.Expr:
        left = self.unary()
        while self.at_sym("*", "/", "%"):
            op = self.advance().text
            left = A.BinaryOp(op, left, self.unary())
        return left

    def unary(self) -> A.Expr:
        if self.accept_sym("-"):
            return A.Negate(self.unary())
        return self.primary()

    def primary(self) -> A.Expr:
        tok = self.peek()
        if tok is None:
            self.fail("unexpected end of input", ("expression",))
        if tok.kind is K.NUMBER_LITERAL:
            self.i += 1
            return A.Literal("number", tok.text)
        if tok.kind is K.STRING_LITERAL:
            self.i += 1
            return A.Literal("string", tok.text)
        if tok.is_kw("NULL"):
            self.i += 1
            return A.Literal("null", "NULL")
        if self.accept_sym("*"):
            return A.Star()
        if self.accept_sym("("):
            if self.at_kw("SELECT"):
                node = A.Subquery(self.query())
            else:
                node = self.expr()
            self.expect_sym(")")
            return node
        if tok.kind is K.KEYWORD and tok.upper in AGGREGATES:
            if self.at_sym("(", offset=1):
                return self.aggregate()
            # a column that happens to share an aggregate's name
            self.i += 1
            return A.ColumnRef(A.Identifier(tok.text), column_tok=self.i - 1)
        if self.at_name():
            return self.name_expr()
        self.fail(f"unexpected token {tok.text!r}", ("expression",))

    def aggregate(self) -> A.Aggregate:
        func = self.advance().text.lower()
        self.expect_sym("(")
        distinct = self.accept_kw("DISTINCT")
        arg = self.expr()
        if isinstance(arg, A.Aggregate):
            self.fail("aggregate nested directly inside aggregate")
        self.expect_sym(")")
        return A.Aggregate(func, arg, distinct)

    def name_expr(self) -> A.Expr:
        tok = self.peek()
        if tok.kind is K.IDENTIFIER and self.at_sym("(", offset=1):
            self.i += 2
            args: list = []
            if not self.at_sym(")"):
                args = self.expr_list()
            self.expect_sym(")")
            return A.FuncCall(tok.text, tuple(args))
        first, first_idx = self.name()
        if not self.accept_sym("."):
            return A.ColumnRef(first, column_tok=first_idx)
        if self.accept_sym("*"):
            return A.Star(first, table_tok=first_idx)
        nxt = self.peek()
        if nxt is not None and nxt.kind is K.KEYWORD:
            # keywords are legal column names after a qualifier
            self.i += 1
            return A.ColumnRef(A.Identifier(nxt.text), first, self.i - 1, first_idx)
        column, col_idx = self.name()
        return A.ColumnRef(column, first, col_idx, first_idx)


def parse_tokens(tokens: list[SqlToken]) -> A.Query:
    p = _Parser(tokens)
    query = p.query()
    p.accept_sym(";")
    if p.peek() is not None:
        p.fail(f"trailing input {p.peek().text!r}", ("end of input",))
    return query


def parse(sql: str) -> A.Query:
    """Parse one SELECT statement (optionally with set operations)."""
    return parse_tokens(tokenize(sql))
