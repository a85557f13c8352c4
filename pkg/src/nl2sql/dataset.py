"""Question/SQL datasets: ingestion, schema coverage and training export."""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .repair import Role, identifier_slots
from .schema import DbSchema
from .sql import SqlError, parse_tokens, tokenize

logger = logging.getLogger(__name__)

PROMPT_FORMAT_VERSION = "nl2sql-prompt/1"
DEFAULT_MIN_COVERAGE = 2


class DatasetError(ValueError):
    pass


class AlignmentError(ValueError):
    """Predictions do not line up with the dataset they are scored against."""


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class QueryPair:
    question: str
    gold_sql: str
    db_id: str
    split: Split = Split.TRAIN

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise DatasetError("empty question")
        if not self.gold_sql or not self.gold_sql.strip():
            raise DatasetError("empty gold SQL")
        object.__setattr__(self, "split", Split(self.split))


class SchemaElement(NamedTuple):
    db_id: str
    table: str
    column: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.table}.{self.column}" if self.column else self.table


@dataclass
class DatasetStats:
    n_train: int = 0
    n_test: int = 0
    n_databases: int = 0
    coverage: dict[SchemaElement, int] = field(default_factory=dict)
    unparseable: list[int] = field(default_factory=list)  # pair indices

    @property
    def total(self) -> int:
        return self.n_train + self.n_test

    def count(self, name: str) -> int:
        """Occurrences of ``table``, ``column`` or ``table.column`` (summed over matches)."""
        name = name.lower()
        total = 0
        for el, n in self.coverage.items():
            labels = {str(el).lower()}
            if el.column:
                labels.add(el.column.lower())
            if name in labels:
                total += n
        return total

    def uncovered(self, threshold: int = DEFAULT_MIN_COVERAGE) -> list[SchemaElement]:
        return [el for el, n in self.coverage.items() if n < threshold]


@dataclass(frozen=True)
class TrainingExample:
    source: str
    target: str


# -- coverage ----------------------------------------------------------------


def schema_elements(schema: DbSchema) -> list[SchemaElement]:
    out = []
    for table in schema.tables:
        out.append(SchemaElement(schema.db_id, table.name))
        out.extend(SchemaElement(schema.db_id, table.name, c.name) for c in table.columns)
    return out


def referenced_elements(sql: str, schema: DbSchema) -> list[SchemaElement]:
    """Schema tables and columns referenced by ``sql``, one entry per occurrence.

    Aliases are resolved; unqualified columns go to the innermost table in
    scope that owns them. Raises ``SqlError`` when ``sql`` does not parse.
    """
    tokens = tokenize(sql)
    slots, _ = identifier_slots(parse_tokens(tokens))

    def name_at(tok: int) -> str:
        text = tokens[tok].text
        return text[1:-1].replace('""', '"') if text.startswith('"') else text

    found = []
    for slot in slots:
        if slot.role is Role.TABLE:
            table = schema.table(slot.ident.name)
            if table is not None:
                found.append(SchemaElement(schema.db_id, table.name))
        elif slot.role is Role.COLUMN and slot.checkable:
            if slot.qualifier_table is not None:
                owners = [name_at(slot.qualifier_table)]
            else:
                owners = [name_at(t) for t in slot.visible] or list(schema.owners_of(slot.ident.name))
            for owner in owners:
                table = schema.table(owner)
                col = table.column(slot.ident.name) if table else None
                if col is not None:
                    found.append(SchemaElement(schema.db_id, table.name, col.name))
                    break
    return found


def compute_stats(pairs: Sequence[QueryPair], schemas: Mapping[str, DbSchema]) -> DatasetStats:
    splits = Counter(p.split for p in pairs)
    coverage: dict[SchemaElement, int] = {}
    for schema in schemas.values():
        for el in schema_elements(schema):
            coverage[el] = 0
    unparseable = []
    for i, pair in enumerate(pairs):
        schema = schemas.get(pair.db_id)
        if schema is None:
            raise DatasetError(f"pair {i}: unknown db_id {pair.db_id!r}")
        try:
            refs = referenced_elements(pair.gold_sql, schema)
        except SqlError:
            unparseable.append(i)
            continue
        for el in refs:
            coverage[el] += 1
    return DatasetStats(
        n_train=splits[Split.TRAIN],
        n_test=splits[Split.TEST],
        n_databases=len(schemas),
        coverage=coverage,
        unparseable=unparseable,
    )


@dataclass
class CoverageReport:
    stats: DatasetStats
    threshold: int
    uncovered: list[SchemaElement]

    @property
    def fully_covered(self) -> bool:
        return not self.uncovered


def coverage_report(
    pairs: Sequence[QueryPair],
    schemas: Mapping[str, DbSchema] | Iterable[DbSchema],
    threshold: int = DEFAULT_MIN_COVERAGE,
) -> CoverageReport:
    if not isinstance(schemas, Mapping):
        schemas = {s.db_id: s for s in schemas}
    stats = compute_stats(pairs, schemas)
    return CoverageReport(stats, threshold, stats.uncovered(threshold))


# -- ingestion ---------------------------------------------------------------


def _read_json_array(path: Path) -> list:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON at char {exc.pos}: {exc.msg}") from None
    if not isinstance(data, list):
        raise DatasetError(f"{path}: expected a JSON array")
    return data


def read_spider_pairs(path: str | Path, split: Split | str) -> list[QueryPair]:
    path = Path(path)
    pairs = []
    for i, rec in enumerate(_read_json_array(path)):
        try:
            pairs.append(QueryPair(rec["question"], rec["query"], rec["db_id"], Split(split)))
        except KeyError as exc:
            raise DatasetError(f"{path}: record {i} is missing field {exc.args[0]!r}") from None
        except (TypeError, DatasetError) as exc:
            raise DatasetError(f"{path}: record {i}: {exc}") from None
    return pairs


def ingest_spider(
    train_paths: str | Path | Sequence[str | Path],
    dev_path: str | Path,
    tables_path: str | Path,
) -> tuple[list[QueryPair], DatasetStats]:
    """Load Spider train files (e.g. train_spider + train_others), dev, and tables."""
    from .schema import load_spider_tables

    if isinstance(train_paths, (str, Path)):
        train_paths = [train_paths]
    schemas = {s.db_id: s for s in load_spider_tables(tables_path)}
    pairs: list[QueryPair] = []
    for path in train_paths:
        pairs.extend(read_spider_pairs(path, Split.TRAIN))
    pairs.extend(read_spider_pairs(dev_path, Split.TEST))
    return pairs, compute_stats(pairs, schemas)


def read_custom_pairs(path: str | Path, db_id: str) -> list[QueryPair]:
    path = Path(path)
    pairs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
            missing = [k for k in ("question", "sql", "split") if k not in rec]
            if missing:
                raise DatasetError(f"{path}:{lineno}: missing field {missing[0]!r}")
            if rec["split"] not in ("train", "test"):
                raise DatasetError(f"{path}:{lineno}: unknown split {rec['split']!r}")
            try:
                pairs.append(QueryPair(rec["question"], rec["sql"], db_id, Split(rec["split"])))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    return pairs


def ingest_custom(path: str | Path, schema: DbSchema) -> tuple[list[QueryPair], DatasetStats]:
    pairs = read_custom_pairs(path, schema.db_id)
    stats = compute_stats(pairs, {schema.db_id: schema})
    if stats.unparseable:
        logger.warning("%s: %d gold queries do not parse: %s", path, len(stats.unparseable),
                       stats.unparseable)
    return pairs, stats


def write_custom_pairs(pairs: Iterable[QueryPair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {"question": p.question, "sql": p.gold_sql, "split": p.split.value}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def split_pairs(pairs: Iterable[QueryPair], split: Split | str) -> list[QueryPair]:
    split = Split(split)
    return [p for p in pairs if p.split is split]


# -- prompts and training export --------------------------------------------


def serialize_schema(schema: DbSchema) -> str:
    return " | ".join(
        f"{t.name}: {', '.join(c.name for c in t.columns)}" for t in schema.tables
    )


def serialize_prompt(pair: QueryPair, schema: DbSchema, include_schema: bool = True) -> str:
    question = pair.question.replace("|", "\\|")
    text = f"translate to SQL: {question} | db: {pair.db_id}"
    if include_schema and schema.tables:
        text += " | " + serialize_schema(schema)
    return text


def assemble_training(
    spider_pairs: Sequence[QueryPair],
    custom_pairs: Sequence[QueryPair],
    schemas: Mapping[str, DbSchema],
    include_schema: bool = True,
) -> list[TrainingExample]:
    """Spider train pairs followed by custom train pairs, as prompt/target examples."""
    out = []
    for pair in [*split_pairs(spider_pairs, Split.TRAIN), *split_pairs(custom_pairs, Split.TRAIN)]:
        schema = schemas[pair.db_id]
        out.append(TrainingExample(serialize_prompt(pair, schema, include_schema), pair.gold_sql))
    return out


def _escape(field_: str) -> str:
    return field_.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(field_: str) -> str:
    out = []
    it = iter(field_)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(nxt, "\\" + nxt))
        else:
            out.append(ch)
    return "".join(out)


def write_training_tsv(examples: Iterable[TrainingExample], path: str | Path) -> int:
    """Write ``source<TAB>target`` rows after a version comment and header row."""
    n = 0
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {PROMPT_FORMAT_VERSION}\n")
        fh.write("source\ttarget\n")
        for ex in examples:
            fh.write(f"{_escape(ex.source)}\t{_escape(ex.target)}\n")
            n += 1
    return n


def read_training_tsv(path: str | Path) -> list[TrainingExample]:
    # fields are escaped, so raw tabs and newlines only ever delimit
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines[0] != f"# {PROMPT_FORMAT_VERSION}":
        raise DatasetError(f"{path}: unsupported training file header {lines[0]!r}")
    if len(lines) < 2 or lines[1] != "source\ttarget":
        raise DatasetError(f"{path}: bad column header")
    out = []
    for lineno, line in enumerate(lines[2:], 3):
        if not line:
            continue
        cells = line.split("\t")
        if len(cells) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 2 fields, found {len(cells)}")
        out.append(TrainingExample(_unescape(cells[0]), _unescape(cells[1])))
    return out


# -- evaluation sets ---------------------------------------------------------


def eval_label(pairs: Sequence[QueryPair]) -> str:
    """``test1`` for unseen test pairs only, ``test2`` for test plus train pairs."""
    splits = {p.split for p in pairs}
    if splits == {Split.TEST}:
        return "test1"
    if splits == {Split.TEST, Split.TRAIN}:
        return "test2"
    return "custom"


def compose_test2(test_pairs: Sequence[QueryPair], custom_train: Sequence[QueryPair]) -> list[QueryPair]:
    return [*split_pairs(test_pairs, Split.TEST), *split_pairs(custom_train, Split.TRAIN)]


# -- prediction files --------------------------------------------------------


def read_predictions(path: str | Path) -> list[str]:
    """Read a replay file: JSON-lines ``{index, sql}`` or one SQL per line."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    first = next((ln for ln in lines if ln.strip()), "")
    if not first.lstrip().startswith("{"):
        return lines
    by_index: dict[int, str] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            idx, sql = rec["index"], rec["sql"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise AlignmentError(f"{path}:{lineno}: expected {{index, sql}} object") from None
        if not isinstance(idx, int) or idx < 0:
            raise AlignmentError(f"{path}:{lineno}: bad index {idx!r}")
        if idx in by_index:
            raise AlignmentError(f"{path}:{lineno}: duplicate index {idx}")
        by_index[idx] = sql
    missing = sorted(set(range(len(by_index))) - set(by_index))
    if missing:
        raise AlignmentError(f"{path}: indices are not contiguous, missing {missing[:5]}")
    return [by_index[i] for i in range(len(by_index))]


def write_predictions(sqls: Sequence[str], path: str | Path, fmt: str = "jsonl") -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, sql in enumerate(sqls):
            if fmt == "jsonl":
                fh.write(json.dumps({"index": i, "sql": sql}, ensure_ascii=False) + "\n")
            else:
                if "\n" in sql:
                    raise ValueError(f"prediction {i} spans lines; use the jsonl format")
                fh.write(sql + "\n")
