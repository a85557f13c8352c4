"""Schema-aware correction of identifiers in generated SQL.

Every table or column name that does not exist in the schema is replaced by
the closest valid name (Levenshtein distance, ties broken by scope order),
provided it lies within the threshold. Everything else in the statement is
left byte-for-byte intact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .schema import DbSchema, IdentContext, candidate_names, resolve_identifier
from .sql import ast as A
from .sql import SqlError, parse_tokens, tokenize
from .sql.tokens import SqlToken

DEFAULT_THRESHOLD = 2


def edit_distance(a: str, b: str) -> int:
    """Case-insensitive Levenshtein distance."""
    a, b = a.lower(), b.lower()
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def best_candidate(
    name: str, candidates: list[str], threshold: int = DEFAULT_THRESHOLD
) -> Optional[tuple[str, int]]:
    """Nearest candidate within ``threshold``; earlier candidates win ties."""
    best: Optional[tuple[str, int]] = None
    for cand in candidates:
        d = edit_distance(name, cand)
        if best is None or d < best[1]:
            best = (cand, d)
            if d == 0:
                break
    if best is None or best[1] > threshold:
        return None
    return best


# -- identifier slots --------------------------------------------------------


class Role(str, enum.Enum):
    TABLE = "table"  # FROM / JOIN table name
    QUALIFIER = "qualifier"  # the ``x`` in ``x.col``
    COLUMN = "column"


@dataclass(frozen=True)
class Slot:
    """One identifier occurrence that names (or should name) schema content."""

    token_index: int
    ident: A.Identifier
    role: Role
    # token indexes of the FROM tables in scope, innermost scope first
    visible: tuple[int, ...] = ()
    # for qualified columns: token index of the table the qualifier points at
    qualifier_table: Optional[int] = None
    # False when the qualifier points at a derived table: nothing to check
    checkable: bool = True
    # qualified column: (qualifier token, {in-scope table token: alias text})
    scope_aliases: tuple = field(default=(), compare=False)


class _SlotWalker:
    def __init__(self, query: A.Query):
        self.slots: list[Slot] = []
        self.local_names: set[str] = set()
        self._collect_locals(query)
        self.query(query, ())

    def _collect_locals(self, node) -> None:
        if isinstance(node, (A.TableRef, A.DerivedTable, A.SelectItem)) and node.alias:
            self.local_names.add(node.alias.key)
        if isinstance(node, tuple):
            for child in node:
                self._collect_locals(child)
        elif hasattr(node, "__dataclass_fields__"):
            for name in node.__dataclass_fields__:
                self._collect_locals(getattr(node, name))

    def query(self, q: A.Query, outer: tuple) -> None:
        for arm in A.arms(q):
            self.select(arm, outer)

    def select(self, s: A.Select, outer: tuple) -> None:
        # scope entries: (key, table token or None for derived, alias text)
        scope = []
        if s.from_ is not None:
            for src in s.from_.sources:
                if isinstance(src, A.TableRef):
                    self.slots.append(Slot(src.name_tok, src.name, Role.TABLE))
                    alias = src.alias.name if src.alias else src.name.name
                    scope.append((src.name.key, src.name_tok, alias))
                    if src.alias is not None:
                        scope.append((src.alias.key, src.name_tok, alias))
                else:
                    self.query(src.query, outer)
                    if src.alias is not None:
                        scope.append((src.alias.key, None, src.alias.name))
        chain = (tuple(scope),) + outer
        visible = tuple(tok for sc in chain for key, tok, _ in sc if tok is not None)
        # dedupe while keeping order
        visible = tuple(dict.fromkeys(visible))

        for node in self._walk(s):
            if isinstance(node, (A.Subquery, A.InQuery, A.Exists)):
                self.query(node.query, chain)
            elif isinstance(node, A.ColumnRef):
                self.column(node, chain, visible)
            elif isinstance(node, A.Star) and node.table is not None:
                self.qualifier(node.table, node.table_tok, chain)
        if s.from_ is not None:
            for join in s.from_.joins:
                if join.on is not None:
                    for node in self._walk_expr(join.on):
                        if isinstance(node, (A.Subquery, A.InQuery, A.Exists)):
                            self.query(node.query, chain)
                        elif isinstance(node, A.ColumnRef):
                            self.column(node, chain, visible)

    def _lookup(self, key: str, chain: tuple):
        for sc in chain:
            for k, tok, alias in sc:
                if k == key:
                    return tok, alias
        return None

    def qualifier(self, ident: A.Identifier, tok: int, chain: tuple):
        found = self._lookup(ident.key, chain)
        if found is not None:
            return found
        self.slots.append(Slot(tok, ident, Role.QUALIFIER))
        return None

    def column(self, ref: A.ColumnRef, chain: tuple, visible: tuple) -> None:
        if ref.column_tok is None:
            return
        if ref.table is None:
            if ref.column.key in self.local_names:
                return
            self.slots.append(Slot(ref.column_tok, ref.column, Role.COLUMN, visible))
            return
        found = self.qualifier(ref.table, ref.table_tok, chain)
        if found is None:
            # unknown qualifier: scope the column by whatever it repairs to
            self.slots.append(
                Slot(ref.column_tok, ref.column, Role.COLUMN, visible, qualifier_table=ref.table_tok)
            )
            return
        table_tok, _ = found
        aliases = tuple((tok, alias) for sc in chain for _, tok, alias in sc if tok is not None)
        self.slots.append(
            Slot(
                ref.column_tok, ref.column, Role.COLUMN, visible,
                qualifier_table=table_tok,
                checkable=table_tok is not None,
                scope_aliases=(ref.table_tok, aliases),
            )
        )

    def _walk(self, s: A.Select) -> Iterator:
        exprs = [i.expr for i in s.items]
        exprs += [e for e in (s.where, s.having) if e is not None]
        exprs += list(s.group_by) + [o.expr for o in s.order_by]
        for e in exprs:
            yield from self._walk_expr(e)

    def _walk_expr(self, e) -> Iterator:
        yield e
        if isinstance(e, (A.Subquery, A.InQuery, A.Exists)):
            if isinstance(e, A.InQuery):
                yield from self._walk_expr(e.expr)
            return
        for name in getattr(e, "__dataclass_fields__", ()):
            child = getattr(e, name)
            if isinstance(child, tuple):
                for c in child:
                    if hasattr(c, "__dataclass_fields__"):
                        yield from self._walk_expr(c)
            elif hasattr(child, "__dataclass_fields__") and not isinstance(child, A.Identifier):
                yield from self._walk_expr(child)


def identifier_slots(query: A.Query) -> tuple[list[Slot], set[str]]:
    """Schema-name slots of a parsed query plus the query's local alias names."""
    walker = _SlotWalker(query)
    slots = sorted(walker.slots, key=lambda s: s.token_index)
    return slots, walker.local_names


# -- repair ------------------------------------------------------------------


class RepairStatus(str, enum.Enum):
    CLEAN = "clean"
    REPAIRED = "repaired"
    UNREPAIRABLE = "unrepairable"


@dataclass(frozen=True)
class Edit:
    token_index: int
    span: tuple[int, int]
    original: str
    replacement: str
    distance: int
    context: IdentContext

    def to_dict(self) -> dict:
        return {
            "token_index": self.token_index,
            "span": list(self.span),
            "original": self.original,
            "replacement": self.replacement,
            "distance": self.distance,
            "context": self.context.kind,
        }


@dataclass(frozen=True)
class RepairReport:
    original_sql: str
    repaired_sql: str
    edits: tuple[Edit, ...]
    status: RepairStatus
    unresolved: tuple[str, ...] = ()

    @property
    def changed(self) -> bool:
        return bool(self.edits)

    def to_dict(self) -> dict:
        return {
            "original_sql": self.original_sql,
            "repaired_sql": self.repaired_sql,
            "status": self.status.value,
            "edits": [e.to_dict() for e in self.edits],
            "unresolved": list(self.unresolved),
        }


def _render(ident: A.Identifier, name: str) -> str:
    return '"' + name.replace('"', '""') + '"' if ident.quoted else name


def repair(
    sql: str,
    schema: DbSchema,
    threshold: int = DEFAULT_THRESHOLD,
    fix_qualifiers: bool = False,
) -> RepairReport:
    """Replace unknown table/column names in ``sql`` with their nearest schema names."""
    try:
        tokens = tokenize(sql)
        query = parse_tokens(tokens)
    except SqlError:
        return RepairReport(sql, sql, (), RepairStatus.UNREPAIRABLE)

    slots, _ = identifier_slots(query)
    new_names: dict[int, str] = {}  # token index -> replacement name
    edits: dict[int, Edit] = {}
    unresolved: list[str] = []

    def fix(slot: Slot, context: IdentContext) -> None:
        hit = best_candidate(slot.ident.name, candidate_names(schema, context), threshold)
        if hit is None:
            unresolved.append(slot.ident.name)
            return
        name, dist = hit
        new_names[slot.token_index] = name
        edits[slot.token_index] = Edit(
            slot.token_index, tokens[slot.token_index].span, slot.ident.name, name, dist, context
        )

    # tables first so column scopes see repaired table names
    for slot in slots:
        if slot.role is not Role.COLUMN and schema.table(slot.ident.name) is None:
            fix(slot, IdentContext.table())

    def table_name(tok: int) -> str:
        return new_names.get(tok) or _token_name(tokens[tok])

    for slot in slots:
        if slot.role is not Role.COLUMN or not slot.checkable:
            continue
        if slot.qualifier_table is not None:
            owner = table_name(slot.qualifier_table)
            visible = (owner,) + tuple(table_name(t) for t in slot.visible)
        else:
            owner = None
            visible = tuple(table_name(t) for t in slot.visible)
        if not resolve_identifier(schema, slot.ident.name).owners:
            fix(slot, IdentContext.column(visible))
        elif fix_qualifiers and owner is not None and slot.scope_aliases:
            _fix_qualifier(slot, owner, schema, tokens, table_name, edits)

    ordered = tuple(edits[k] for k in sorted(edits))
    repaired = _splice(sql, tokens, ordered)
    if unresolved:
        status = RepairStatus.UNREPAIRABLE
    elif ordered:
        status = RepairStatus.REPAIRED
    else:
        status = RepairStatus.CLEAN
    return RepairReport(sql, repaired, ordered, status, tuple(unresolved))


def _token_name(tok: SqlToken) -> str:
    if tok.text.startswith('"'):
        return tok.text[1:-1].replace('""', '"')
    return tok.text


def _fix_qualifier(slot, owner, schema, tokens, table_name, edits) -> None:
    """Point ``q.col`` at the one in-scope table that actually has ``col``."""
    if schema.has_column(owner, slot.ident.name):
        return
    qual_tok, aliases = slot.scope_aliases
    if qual_tok in edits:
        return
    holders = {
        alias for tok, alias in aliases if schema.has_column(table_name(tok), slot.ident.name)
    }
    if len(holders) != 1:
        return
    (alias,) = holders
    old = _token_name(tokens[qual_tok])
    if alias.lower() == old.lower():
        return
    edits[qual_tok] = Edit(
        qual_tok, tokens[qual_tok].span, old, alias, edit_distance(old, alias),
        IdentContext("qualifier"),
    )


def _splice(sql: str, tokens: list[SqlToken], edits: tuple[Edit, ...]) -> str:
    out = []
    pos = 0
    for e in edits:
        start, end = e.span
        quoted = tokens[e.token_index].text.startswith('"')
        out.append(sql[pos:start])
        out.append(_render(A.Identifier(e.replacement, quoted), e.replacement))
        pos = end
    out.append(sql[pos:])
    return "".join(out)
