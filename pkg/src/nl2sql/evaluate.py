"""Exact-match and execution-accuracy scoring against SQLite fixtures."""

from __future__ import annotations

import enum
import json
import math
import sqlite3
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .dataset import AlignmentError, QueryPair, eval_label
from .repair import DEFAULT_THRESHOLD, repair
from .schema import DbSchema
from .sql import SqlError, canonical_sql, decompose, parse, serialize
from .sql import ast as A

DEFAULT_STATEMENT_TIMEOUT = 5.0
REL_TOL = 1e-6


class FailureReason(str, enum.Enum):
    PARSE_ERROR = "parse_error"
    EXEC_ERROR = "exec_error"
    TIMEOUT = "timeout"


class ExecutionError(RuntimeError):
    pass


class StatementTimeout(ExecutionError):
    pass


# -- exact match -------------------------------------------------------------


@dataclass(frozen=True)
class FormMatch:
    string: bool
    component: bool
    parse_error: bool = False


def compare_forms(gold: str, pred: str, drop_values: bool = False) -> FormMatch:
    """Both exact-match readings at once. Unparseable pred -> no match."""
    gold_ast = parse(gold)
    try:
        pred_ast = parse(pred)
    except SqlError:
        return FormMatch(False, False, parse_error=True)
    if drop_values:
        string = serialize(_drop_literals(gold_ast), True) == serialize(_drop_literals(pred_ast), True)
    else:
        string = serialize(gold_ast, fold_case=True) == serialize(pred_ast, fold_case=True)
    component = string or decompose(gold_ast, drop_values) == decompose(pred_ast, drop_values)
    return FormMatch(string, component)


def exact_match(gold: str, pred: str, mode: str = "string", drop_values: bool = False) -> bool:
    """Logical-form match. ``mode`` is ``"string"`` or ``"component"``."""
    if mode not in ("string", "component"):
        raise ValueError(f"unknown exact-match mode {mode!r}")
    m = compare_forms(gold, pred, drop_values)
    return m.string if mode == "string" else m.component


def _drop_literals(node):
    if isinstance(node, A.Literal):
        return node if node.kind == "null" else A.Literal("value", "value")
    if isinstance(node, tuple):
        return tuple(_drop_literals(n) for n in node)
    if hasattr(node, "__dataclass_fields__") and not isinstance(node, A.Identifier):
        fields = {k: _drop_literals(getattr(node, k)) for k in node.__dataclass_fields__}
        return type(node)(**fields)
    return node


# -- execution ---------------------------------------------------------------


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]

    def __post_init__(self):
        width = len(self.columns)
        for row in self.rows:
            if len(row) != width:
                raise ValueError("result table is not rectangular")

    @staticmethod
    def cell_type(value: Any) -> str:
        if value is None:
            return "null"
        if isinstance(value, bool) or isinstance(value, int):
            return "integer"
        if isinstance(value, float):
            return "real"
        return "text"


def _normalize_rows(rows: list[tuple]) -> tuple[tuple, ...]:
    """Cells become null/integer/real/text; numeric columns mixing int and real go real."""
    if not rows:
        return ()
    rows = [tuple(c.decode("utf-8", "replace") if isinstance(c, bytes) else c for c in r)
            for r in rows]
    mixed = set()
    for j in range(len(rows[0])):
        kinds = {ResultTable.cell_type(r[j]) for r in rows} - {"null"}
        if kinds == {"integer", "real"}:
            mixed.add(j)
    if mixed:
        rows = [tuple(float(c) if j in mixed and c is not None else c for j, c in enumerate(r))
                for r in rows]
    return tuple(rows)


class Database:
    """Read-only handle on a SQLite fixture; one connection per thread."""

    def __init__(self, path: str | Path, timeout: float = DEFAULT_STATEMENT_TIMEOUT):
        self.path = Path(path)
        if not self.path.is_file():
            raise FileNotFoundError(self.path)
        self.timeout = timeout
        self._local = threading.local()

    def connection(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            uri = self.path.resolve().as_uri() + "?mode=ro"
            conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
            self._local.conn = conn
        return conn

    def execute(self, sql: str, timeout: Optional[float] = None) -> ResultTable:
        return execute(sql, self, timeout)


def execute(sql: str, db: Database, timeout: Optional[float] = None) -> ResultTable:
    """Run ``sql`` on ``db`` under a wall-clock statement timeout."""
    conn = db.connection()
    limit = db.timeout if timeout is None else timeout
    deadline = time.monotonic() + limit
    conn.set_progress_handler(lambda: 1 if time.monotonic() > deadline else 0, 1000)
    try:
        cur = conn.execute(sql)
        rows = cur.fetchall()
        columns = tuple(d[0] for d in cur.description or ())
    except sqlite3.OperationalError as exc:
        if "interrupted" in str(exc) and time.monotonic() > deadline:
            raise StatementTimeout(f"statement exceeded {limit}s") from exc
        raise ExecutionError(str(exc)) from exc
    except (sqlite3.Error, sqlite3.Warning, ValueError) as exc:
        raise ExecutionError(str(exc)) from exc
    finally:
        conn.set_progress_handler(None, 0)
    return ResultTable(columns, _normalize_rows(rows))


def _cells_equal(a: Any, b: Any) -> bool:
    if a is None or b is None:
        return a is None and b is None
    num = (int, float)
    if isinstance(a, num) and isinstance(b, num) and not isinstance(a, bool):
        if isinstance(a, float) or isinstance(b, float):
            return math.isclose(a, b, rel_tol=REL_TOL)
        return a == b
    return type(a) is type(b) and a == b


def _sort_key(row: tuple) -> tuple:
    key = []
    for c in row:
        if c is None:
            key.append((0, 0))
        elif isinstance(c, (int, float)):
            key.append((1, float(c)))
        else:
            key.append((2, str(c)))
    return tuple(key)


def results_match(gold: ResultTable, pred: ResultTable, ordered: bool) -> bool:
    """Bag equality of rows (sequence equality when ``ordered``); reals within 1e-6 relative."""
    if len(gold.columns) != len(pred.columns) or len(gold.rows) != len(pred.rows):
        return False
    g, p = list(gold.rows), list(pred.rows)
    if not ordered:
        if Counter(g) == Counter(p):
            return True
        g.sort(key=_sort_key)
        p.sort(key=_sort_key)
    return all(
        all(_cells_equal(a, b) for a, b in zip(rg, rp)) for rg, rp in zip(g, p)
    )


def has_top_level_order(sql: str) -> bool:
    try:
        return bool(A.last_arm(parse(sql)).order_by)
    except SqlError:
        return "order by" in " ".join(sql.lower().split())


@dataclass(frozen=True)
class ExecOutcome:
    match: Optional[bool]
    failure: Optional[FailureReason] = None


def _execution_outcome(gold: str, pred: str, db: Database, timeout=None) -> ExecOutcome:
    try:
        gold_rows = execute(gold, db, timeout)
    except ExecutionError:
        return ExecOutcome(None)
    try:
        pred_rows = execute(pred, db, timeout)
    except StatementTimeout:
        return ExecOutcome(False, FailureReason.TIMEOUT)
    except ExecutionError:
        return ExecOutcome(False, FailureReason.EXEC_ERROR)
    return ExecOutcome(results_match(gold_rows, pred_rows, has_top_level_order(gold)))


def execution_match(gold: str, pred: str, db: Database, timeout: Optional[float] = None) -> Optional[bool]:
    """True/False when gold executes; ``None`` if gold itself fails."""
    return _execution_outcome(gold, pred, db, timeout).match


# -- corpus evaluation -------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    index: int
    exact_string: bool
    exact_component: bool
    execution: Optional[bool]
    repaired: bool = False
    failure_reason: Optional[FailureReason] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failure_reason"] = self.failure_reason.value if self.failure_reason else None
        return d


@dataclass
class EvalOptions:
    repair: bool = False
    repair_threshold: int = DEFAULT_THRESHOLD
    repair_qualifiers: bool = False
    drop_values: bool = False
    timeout: float = DEFAULT_STATEMENT_TIMEOUT
    parallelism: int = 4
    label: Optional[str] = None


@dataclass
class EvalReport:
    verdicts: list[Verdict]
    test_label: str = "custom"
    failure_counts: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.verdicts)

    @property
    def n_exact_string(self) -> int:
        return sum(v.exact_string for v in self.verdicts)

    @property
    def n_exact_component(self) -> int:
        return sum(v.exact_component for v in self.verdicts)

    @property
    def n_executable(self) -> int:
        return sum(v.execution is not None for v in self.verdicts)

    @property
    def n_execution(self) -> int:
        return sum(bool(v.execution) for v in self.verdicts)

    @staticmethod
    def _ratio(num: int, den: int) -> Fraction:
        return Fraction(num, den) if den else Fraction(0)

    @property
    def exact_match_accuracy(self) -> Fraction:
        """String-mode exact match over all pairs."""
        return self._ratio(self.n_exact_string, self.total)

    @property
    def component_match_accuracy(self) -> Fraction:
        return self._ratio(self.n_exact_component, self.total)

    @property
    def execution_accuracy(self) -> Fraction:
        """Over pairs whose gold query executed."""
        return self._ratio(self.n_execution, self.n_executable)

    def summary(self) -> str:
        return (
            f"exact(string)={self.n_exact_string}/{self.total} "
            f"exact(component)={self.n_exact_component}/{self.total} "
            f"exec={self.n_execution}/{self.n_executable}"
        )

    def to_dict(self) -> dict:
        return {
            "test_label": self.test_label,
            "total": self.total,
            "exact_string": [self.n_exact_string, self.total],
            "exact_component": [self.n_exact_component, self.total],
            "execution": [self.n_execution, self.n_executable],
            "failure_counts": dict(sorted(self.failure_counts.items())),
            "verdicts": [v.to_dict() for v in self.verdicts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        verdicts = [
            Verdict(
                v["index"], v["exact_string"], v["exact_component"], v["execution"],
                v["repaired"], FailureReason(v["failure_reason"]) if v["failure_reason"] else None,
            )
            for v in data["verdicts"]
        ]
        return cls(verdicts, data["test_label"], dict(data["failure_counts"]))


def format_percent(ratio: Fraction, places: int = 1) -> str:
    """Percentage rounded half-up at ``places`` decimals, computed exactly."""
    scaled = ratio * 100 * 10**places
    rounded = math.floor(scaled + Fraction(1, 2))
    whole, frac = divmod(rounded, 10**places)
    return f"{whole}.{frac:0{places}d}%" if places else f"{whole}%"


def evaluate_pair(
    index: int,
    pair: QueryPair,
    pred: str,
    schema: Optional[DbSchema],
    db: Optional[Database],
    options: EvalOptions,
) -> Verdict:
    repaired = False
    if options.repair and schema is not None:
        report = repair(pred, schema, options.repair_threshold, options.repair_qualifiers)
        repaired = report.changed
        pred = report.repaired_sql
    failure: Optional[FailureReason] = None
    try:
        forms = compare_forms(pair.gold_sql, pred, options.drop_values)
    except SqlError:
        # unparseable gold: no form match is possible
        forms = FormMatch(False, False, parse_error=True)
    if forms.parse_error:
        failure = FailureReason.PARSE_ERROR
    execution: Optional[bool] = None
    if db is not None:
        outcome = _execution_outcome(pair.gold_sql, pred, db, options.timeout)
        execution = outcome.match
        failure = failure or outcome.failure
    return Verdict(index, forms.string, forms.component, execution, repaired, failure)


def evaluate_corpus(
    pairs: Sequence[QueryPair],
    predictions: Sequence[str],
    schemas: Mapping[str, DbSchema],
    dbs: Mapping[str, Database],
    options: Optional[EvalOptions] = None,
) -> EvalReport:
    """Score aligned predictions; verdicts come back in dataset order."""
    options = options or EvalOptions()
    if len(predictions) != len(pairs):
        raise AlignmentError(f"{len(predictions)} predictions for {len(pairs)} pairs")

    def work(i: int) -> Verdict:
        pair = pairs[i]
        return evaluate_pair(
            i, pair, predictions[i], schemas.get(pair.db_id), dbs.get(pair.db_id), options
        )

    workers = max(1, options.parallelism)
    if workers == 1 or len(pairs) < 2:
        verdicts = [work(i) for i in range(len(pairs))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(work, range(len(pairs))))
    failures = Counter(v.failure_reason.value for v in verdicts if v.failure_reason)
    label = options.label or eval_label(pairs)
    return EvalReport(verdicts, label, dict(failures))


def find_databases(root: str | Path, timeout: float = DEFAULT_STATEMENT_TIMEOUT) -> dict[str, Database]:
    """Spider layout: ``<root>/<db_id>/<db_id>.sqlite``."""
    out = {}
    for path in sorted(Path(root).glob("*/*.sqlite")):
        if path.stem == path.parent.name:
            out[path.stem] = Database(path, timeout)
    return out
