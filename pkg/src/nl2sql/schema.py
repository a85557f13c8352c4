"""Database schemas: loading, validation and name lookup.

Two on-disk layouts are supported:

* Spider's ``tables.json`` (a JSON array, one entry per database).
* A line-oriented flat file::

      db utility
      table meters
        column id number
        column location text
      pk meters.id
      fk readings.meter_id meters.id

  ``db`` is optional (defaults to the file stem). ``#`` starts a comment.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence


class SchemaError(ValueError):
    """Schema content violates an integrity rule."""

    def __init__(self, message: str, db_id: str | None = None):
        super().__init__(f"{db_id}: {message}" if db_id else message)
        self.db_id = db_id


class SchemaParseError(ValueError):
    """Schema file is not well formed."""

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        where = []
        if offset is not None:
            where.append(f"byte {offset}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.line = line


class ColumnType(str, enum.Enum):
    TEXT = "text"
    NUMBER = "number"
    TIME = "time"
    BOOLEAN = "boolean"
    OTHER = "other"

    @classmethod
    def parse(cls, raw: str) -> "ColumnType":
        raw = raw.strip().lower()
        if raw == "others":  # Spider spelling
            return cls.OTHER
        try:
            return cls(raw)
        except ValueError:
            raise SchemaError(f"unknown column type {raw!r}") from None


class ColumnKey(NamedTuple):
    table: str
    column: str

    def __str__(self) -> str:
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class Column:
    name: str
    col_type: ColumnType = ColumnType.TEXT

    def __post_init__(self):
        if not self.name:
            raise SchemaError("column name is empty")
        if not isinstance(self.col_type, ColumnType):
            object.__setattr__(self, "col_type", ColumnType.parse(str(self.col_type)))


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.name:
            raise SchemaError("table name is empty")
        if not self.columns:
            raise SchemaError(f"table {self.name!r} has no columns")
        seen = set()
        for col in self.columns:
            key = col.name.lower()
            if key in seen:
                raise SchemaError(f"duplicate column {col.name!r} in table {self.name!r}")
            seen.add(key)

    def column(self, name: str) -> Column | None:
        name = name.lower()
        for col in self.columns:
            if col.name.lower() == name:
                return col
        return None


class Resolution(NamedTuple):
    """Result of looking a bare name up in a schema.

    A name can be a table and a column at once; ``kind`` reports the table
    reading first.
    """

    is_table: bool
    owners: tuple[str, ...]  # tables owning a column of that name

    @property
    def kind(self) -> str:
        if self.is_table:
            return "table"
        if self.owners:
            return "column"
        return "unknown"

    @property
    def unknown(self) -> bool:
        return not self.is_table and not self.owners


@dataclass(frozen=True)
class IdentContext:
    """Where an identifier sits in a query: a table slot or a column slot.

    ``visible`` lists the tables in scope for a column slot (FROM clause).
    """

    kind: str  # "table" | "column"
    visible: tuple[str, ...] = ()

    @classmethod
    def table(cls) -> "IdentContext":
        return cls("table")

    @classmethod
    def column(cls, visible: Iterable[str] = ()) -> "IdentContext":
        return cls("column", tuple(visible))


TABLE_POSITION = IdentContext.table()


@dataclass(frozen=True)
class DbSchema:
    db_id: str
    tables: tuple[Table, ...]
    primary_keys: tuple[ColumnKey, ...] = ()
    foreign_keys: tuple[tuple[ColumnKey, ColumnKey], ...] = ()
    _tables_by_name: dict = field(default=None, init=False, repr=False, compare=False)
    _column_owners: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        object.__setattr__(self, "primary_keys", tuple(ColumnKey(*k) for k in self.primary_keys))
        object.__setattr__(
            self,
            "foreign_keys",
            tuple((ColumnKey(*a), ColumnKey(*b)) for a, b in self.foreign_keys),
        )
        by_name: dict[str, Table] = {}
        owners: dict[str, list[str]] = {}
        for table in self.tables:
            key = table.name.lower()
            if key in by_name:
                raise SchemaError(f"duplicate table {table.name!r}", self.db_id)
            by_name[key] = table
            for col in table.columns:
                owners.setdefault(col.name.lower(), []).append(table.name)
        object.__setattr__(self, "_tables_by_name", by_name)
        object.__setattr__(self, "_column_owners", {k: tuple(v) for k, v in owners.items()})

        for ref in self.primary_keys:
            self._check_ref(ref, "primary key")
        for a, b in self.foreign_keys:
            self._check_ref(a, "foreign key")
            self._check_ref(b, "foreign key")

    def _check_ref(self, ref: ColumnKey, what: str) -> None:
        table = self.table(ref.table)
        if table is None:
            raise SchemaError(f"{what} {ref} references missing table {ref.table!r}", self.db_id)
        if table.column(ref.column) is None:
            raise SchemaError(f"{what} {ref} references missing column", self.db_id)

    def table(self, name: str) -> Table | None:
        return self._tables_by_name.get(name.lower())

    @property
    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def column_keys(self) -> list[ColumnKey]:
        return [ColumnKey(t.name, c.name) for t in self.tables for c in t.columns]

    def owners_of(self, column: str) -> tuple[str, ...]:
        return self._column_owners.get(column.lower(), ())

    def has_column(self, table: str, column: str) -> bool:
        t = self.table(table)
        return t is not None and t.column(column) is not None


def resolve_identifier(schema: DbSchema, name: str) -> Resolution:
    """Case-insensitive exact lookup of ``name`` as a table and as a column."""
    return Resolution(schema.table(name) is not None, schema.owners_of(name))


def candidate_names(schema: DbSchema, context: IdentContext) -> list[str]:
    """Valid names for an identifier slot, in priority order.

    Column slots list the columns of ``context.visible`` tables (in the
    order given) before every other column in declaration order. Duplicate
    names keep their first position only.
    """
    if context.kind == "table":
        return schema.table_names

    out: list[str] = []
    seen: set[str] = set()

    def add(table: Table) -> None:
        for col in table.columns:
            key = col.name.lower()
            if key not in seen:
                seen.add(key)
                out.append(col.name)

    visible = []
    for name in context.visible:
        t = schema.table(name)
        if t is not None and t not in visible:
            visible.append(t)
    for t in visible:
        add(t)
    for t in schema.tables:
        if t not in visible:
            add(t)
    return out


# -- Spider tables.json ------------------------------------------------------


def _json_error(exc: json.JSONDecodeError, text: str) -> SchemaParseError:
    offset = len(text[: exc.pos].encode("utf-8"))
    return SchemaParseError(f"malformed JSON: {exc.msg}", offset=offset)


def schema_from_spider(entry: dict) -> DbSchema:
    db_id = entry.get("db_id")
    if not db_id:
        raise SchemaError("entry without db_id")
    try:
        table_names = entry.get("table_names_original") or entry["table_names"]
        column_names = entry.get("column_names_original") or entry["column_names"]
        column_types = entry["column_types"]
    except KeyError as exc:
        raise SchemaError(f"missing field {exc.args[0]!r}", db_id) from None
    if len(column_types) != len(column_names):
        raise SchemaError("column_types and column_names differ in length", db_id)

    refs: list[ColumnKey | None] = []
    per_table: list[list[Column]] = [[] for _ in table_names]
    for (t_idx, col_name), col_type in zip(column_names, column_types):
        if t_idx < 0:
            refs.append(None)  # the "*" sentinel
            continue
        if t_idx >= len(table_names):
            raise SchemaError(f"column {col_name!r} has bad table index {t_idx}", db_id)
        per_table[t_idx].append(Column(col_name, ColumnType.parse(col_type)))
        refs.append(ColumnKey(table_names[t_idx], col_name))

    def ref(idx: int) -> ColumnKey:
        if not isinstance(idx, int) or not 0 <= idx < len(refs) or refs[idx] is None:
            raise SchemaError(f"dangling column index {idx} in keys", db_id)
        return refs[idx]

    pks: list[ColumnKey] = []
    for pk in entry.get("primary_keys", []):
        # newer Spider releases allow composite keys as nested lists
        for idx in pk if isinstance(pk, list) else [pk]:
            pks.append(ref(idx))
    fks = [(ref(a), ref(b)) for a, b in entry.get("foreign_keys", [])]
    tables = [Table(name, tuple(cols)) for name, cols in zip(table_names, per_table)]
    return DbSchema(db_id, tuple(tables), tuple(pks), tuple(fks))


def load_spider_tables(path: str | Path) -> list[DbSchema]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _json_error(exc, text) from None
    if not isinstance(data, list):
        raise SchemaParseError("tables file must hold a JSON array", offset=0)
    return [schema_from_spider(entry) for entry in data]


def schema_to_spider(schema: DbSchema) -> dict:
    column_names = [[-1, "*"]]
    column_types = ["text"]
    index: dict[ColumnKey, int] = {}
    for t_idx, table in enumerate(schema.tables):
        for col in table.columns:
            index[ColumnKey(table.name.lower(), col.name.lower())] = len(column_names)
            column_names.append([t_idx, col.name])
            column_types.append(col.col_type.value)

    def idx(key: ColumnKey) -> int:
        return index[ColumnKey(key.table.lower(), key.column.lower())]

    return {
        "db_id": schema.db_id,
        "table_names_original": schema.table_names,
        "table_names": schema.table_names,
        "column_names_original": column_names,
        "column_names": column_names,
        "column_types": column_types,
        "primary_keys": [idx(k) for k in schema.primary_keys],
        "foreign_keys": [[idx(a), idx(b)] for a, b in schema.foreign_keys],
    }


# -- flat schema format ------------------------------------------------------


def _split_ref(text: str, lineno: int) -> ColumnKey:
    table, dot, column = text.partition(".")
    if not dot or not table or not column:
        raise SchemaParseError(f"expected table.column, got {text!r}", line=lineno)
    return ColumnKey(table, column)


def parse_flat_schema(text: str, default_db_id: str = "db") -> DbSchema:
    db_id = default_db_id
    tables: list[tuple[str, list[Column]]] = []
    pks: list[ColumnKey] = []
    fks: list[tuple[ColumnKey, ColumnKey]] = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *rest = line.split()
        if word == "db" and len(rest) == 1:
            db_id = rest[0]
        elif word == "table" and len(rest) == 1:
            tables.append((rest[0], []))
        elif word == "column" and len(rest) in (1, 2):
            if not tables:
                raise SchemaParseError("column outside of a table", line=lineno)
            col_type = ColumnType.parse(rest[1]) if len(rest) == 2 else ColumnType.TEXT
            tables[-1][1].append(Column(rest[0], col_type))
        elif word == "pk" and len(rest) == 1:
            pks.append(_split_ref(rest[0], lineno))
        elif word == "fk" and len(rest) == 2:
            fks.append((_split_ref(rest[0], lineno), _split_ref(rest[1], lineno)))
        else:
            raise SchemaParseError(f"unrecognised line {raw.strip()!r}", line=lineno)

    return DbSchema(db_id, tuple(Table(n, tuple(c)) for n, c in tables), tuple(pks), tuple(fks))


def load_flat_schema(path: str | Path) -> DbSchema:
    path = Path(path)
    return parse_flat_schema(path.read_text(encoding="utf-8"), default_db_id=path.stem)


def dump_flat_schema(schema: DbSchema) -> str:
    lines = [f"db {schema.db_id}"]
    for table in schema.tables:
        lines.append(f"table {table.name}")
        lines.extend(f"  column {c.name} {c.col_type.value}" for c in table.columns)
    lines.extend(f"pk {k}" for k in schema.primary_keys)
    lines.extend(f"fk {a} {b}" for a, b in schema.foreign_keys)
    return "\n".join(lines) + "\n"


def load_schemas(paths: Sequence[str | Path]) -> dict[str, DbSchema]:
    """Load any mix of ``tables.json`` and flat files into a db_id map."""
    out: dict[str, DbSchema] = {}
    for path in paths:
        loaded = load_spider_tables(path) if str(path).endswith(".json") else [load_flat_schema(path)]
        for schema in loaded:
            out[schema.db_id] = schema
    return out
