"""Sources of raw NL->SQL translations.

Every backend exposes ``translate(request) -> TranslationResponse`` and is
safe to call from several threads. Output is never repaired here; repair is
a later pipeline stage.

Wire protocol (version 1) spoken by :class:`HttpBackend` and
:func:`serve_mock`::

    POST /translate
    X-NL2SQL-Proto: 1
    {"question": "...", "db_id": "...", "schema": "..."}

    200 {"sql": "..."}
"""

from __future__ import annotations

import json
import logging
import random
import re
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import httpx

from .dataset import AlignmentError, QueryPair, Split, read_predictions, serialize_schema
from .repair import edit_distance
from .schema import DbSchema

logger = logging.getLogger(__name__)

PROTO_HEADER = "X-NL2SQL-Proto"
PROTO_VERSION = "1"
DEFAULT_TIMEOUT = 30.0


class TranslationError(RuntimeError):
    pass


class TransportError(TranslationError):
    """The backend could not be reached (connection failure, timeout)."""


class BackendError(TranslationError):
    def __init__(self, status: int, body: str):
        super().__init__(f"backend returned HTTP {status}: {body}")
        self.status = status
        self.body = body


class NoTemplateMatch(TranslationError):
    pass


@dataclass(frozen=True)
class TranslationRequest:
    question: str
    db_id: str
    schema_serialization: str = ""
    index: Optional[int] = None  # dataset position; used by the replay backend

    def __post_init__(self):
        if not self.question:
            raise ValueError("empty question")
        if not self.db_id:
            raise ValueError("empty db_id")

    @classmethod
    def for_pair(cls, pair: QueryPair, schema: Optional[DbSchema], index: Optional[int] = None):
        text = serialize_schema(schema) if schema is not None else ""
        return cls(pair.question, pair.db_id, text, index)


@dataclass(frozen=True)
class TranslationResponse:
    sql: str
    latency_ms: float
    backend_id: str


class Backend(Protocol):
    backend_id: str

    def translate(self, req: TranslationRequest) -> TranslationResponse: ...


def _timed(backend_id: str, start: float, sql: str) -> TranslationResponse:
    if not sql:
        raise TranslationError(f"{backend_id} backend produced empty SQL")
    return TranslationResponse(sql, (time.perf_counter() - start) * 1000.0, backend_id)


class ReplayBackend:
    """Serve pre-computed predictions by dataset index."""

    backend_id = "replay"

    def __init__(self, predictions: Sequence[str] | str | Path):
        if isinstance(predictions, (str, Path)):
            predictions = read_predictions(predictions)
        self.predictions = tuple(predictions)

    def __len__(self) -> int:
        return len(self.predictions)

    def translate(self, req: TranslationRequest) -> TranslationResponse:
        start = time.perf_counter()
        if req.index is None or not 0 <= req.index < len(self.predictions):
            raise AlignmentError(
                f"no prediction for index {req.index} ({len(self.predictions)} available)"
            )
        return _timed(self.backend_id, start, self.predictions[req.index])


# -- template baseline -------------------------------------------------------

_WORD = r"([A-Za-z_][A-Za-z0-9_]*)"
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")
_AGG_WORDS = {"max": "max", "maximum": "max", "highest": "max",
              "min": "min", "minimum": "min", "lowest": "min"}

# (family, pattern); first match wins
TEMPLATES = [
    ("count-rows", re.compile(rf"^how many rows are (?:there )?in (?:the )?{_WORD}$")),
    ("count-rows", re.compile(rf"^how many {_WORD} are there$")),
    ("max-min", re.compile(
        rf"^what is the (max|maximum|highest|min|minimum|lowest) {_WORD} (?:in|of) (?:the )?{_WORD}$")),
    ("filter-equals", re.compile(
        rf"^(?:list|show) (?:the )?{_WORD} of (?:all )?{_WORD} (?:where|whose|with) {_WORD} (?:is|=|equals) (.+)$")),
    ("list-column", re.compile(rf"^(?:list|show) (?:the )?(?:all )?{_WORD} of (?:all )?(?:the )?{_WORD}$")),
]


def _table_name(word: str, schema: DbSchema) -> str:
    table = schema.table(word)
    return table.name if table else word


def _column_name(word: str, table: str, schema: DbSchema) -> str:
    t = schema.table(table)
    col = t.column(word) if t else None
    if col is not None:
        return col.name
    owners = schema.owners_of(word)
    if owners:
        return schema.table(owners[0]).column(word).name
    return word


def _value(text: str) -> str:
    text = text.strip().strip("'\"")
    if _NUMBER.fullmatch(text):
        return text
    return "'" + text.replace("'", "''") + "'"


def baseline_translate(question: str, schema: DbSchema) -> str:
    """Deterministic SQL for a handful of question templates.

    Families: count-rows, list-column, max/min-of-column and filter-equals.
    Names that are not in the schema are copied from the question untouched,
    leaving them for the repair stage.
    """
    q = " ".join(question.strip().rstrip("?.!").split())
    low = q.lower()
    for family, pattern in TEMPLATES:
        m = pattern.match(low)
        if not m:
            continue
        # take names from the original casing of the question
        g = [q[m.start(i):m.end(i)] for i in range(1, (m.lastindex or 0) + 1)]
        if family == "count-rows":
            return f"SELECT count(*) FROM {_table_name(g[0], schema)}"
        if family == "max-min":
            table = _table_name(g[2], schema)
            return f"SELECT {_AGG_WORDS[g[0].lower()]}({_column_name(g[1], table, schema)}) FROM {table}"
        if family == "filter-equals":
            table = _table_name(g[1], schema)
            col = _column_name(g[0], table, schema)
            where = _column_name(g[2], table, schema)
            return f"SELECT {col} FROM {table} WHERE {where} = {_value(g[3])}"
        table = _table_name(g[1], schema)
        return f"SELECT {_column_name(g[0], table, schema)} FROM {table}"
    raise NoTemplateMatch(f"no template matches {question!r}")


class BaselineBackend:
    backend_id = "baseline"

    def __init__(self, schemas: Mapping[str, DbSchema] | DbSchema):
        if isinstance(schemas, DbSchema):
            schemas = {schemas.db_id: schemas}
        self.schemas = dict(schemas)

    def translate(self, req: TranslationRequest) -> TranslationResponse:
        start = time.perf_counter()
        schema = self.schemas.get(req.db_id)
        if schema is None:
            raise TranslationError(f"baseline backend has no schema for {req.db_id!r}")
        return _timed(self.backend_id, start, baseline_translate(req.question, schema))


# -- HTTP client ---------------------------------------------------------------


class HttpBackend:
    backend_id = "http"

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT, retries: int = 1):
        self.endpoint = endpoint.rstrip("/")
        if not self.endpoint.endswith("/translate"):
            self.endpoint += "/translate"
        self.retries = retries
        self._client = httpx.Client(
            timeout=timeout,
            headers={PROTO_HEADER: PROTO_VERSION, "Content-Type": "application/json"},
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def translate(self, req: TranslationRequest) -> TranslationResponse:
        body = {"question": req.question, "db_id": req.db_id, "schema": req.schema_serialization}
        start = time.perf_counter()
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.endpoint, json=body)
                break
            except httpx.TransportError as exc:
                if attempt == self.retries:
                    raise TransportError(f"{self.endpoint}: {exc}") from exc
                logger.debug("transport error on attempt %d: %s", attempt + 1, exc)
        if resp.status_code >= 400:
            raise BackendError(resp.status_code, resp.text)
        try:
            sql = resp.json()["sql"]
        except (ValueError, KeyError, TypeError):
            raise BackendError(resp.status_code, f"malformed response body: {resp.text[:200]}") from None
        if not isinstance(sql, str) or not sql:
            raise BackendError(resp.status_code, "response has no sql")
        return _timed(self.backend_id, start, sql)


# -- mock server -------------------------------------------------------------


class _MockHandler(BaseHTTPRequestHandler):
    server: "_MockHTTPServer"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        logger.debug("mock: " + fmt, *args)

    def _reply(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header(PROTO_HEADER, PROTO_VERSION)
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        if self.path.rstrip("/") != "/translate":
            self._reply(404, {"error": f"no route {self.path}"})
            return
        proto = self.headers.get(PROTO_HEADER)
        if proto is not None and proto != PROTO_VERSION:
            self._reply(400, {"error": f"unsupported protocol version {proto}"})
            return
        length = int(self.headers.get("Content-Length") or 0)
        try:
            body = json.loads(self.rfile.read(length) or b"null")
            question = body["question"]
        except (ValueError, KeyError, TypeError):
            self._reply(400, {"error": "expected JSON object with a question"})
            return
        sql = self.server.canned.get(question, self.server.default)
        if sql is None:
            self._reply(404, {"error": "unknown question"})
        else:
            self._reply(200, {"sql": sql})


class _MockHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, canned: Mapping[str, str], default: Optional[str]):
        self.canned = dict(canned)
        self.default = default
        super().__init__(addr, _MockHandler)


class MockServer:
    """Handle for a running mock translation server."""

    def __init__(self, server: _MockHTTPServer):
        self._server = server
        self._thread = threading.Thread(target=server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()

    def serve_forever(self) -> None:
        self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_mock(
    port: int = 0,
    canned: Optional[Mapping[str, str]] = None,
    default: Optional[str] = None,
    host: str = "127.0.0.1",
) -> MockServer:
    """Start a mock server in a background thread. ``port=0`` picks a free port."""
    return MockServer(_MockHTTPServer((host, port), canned or {}, default))


# -- template dataset ----------------------------------------------------------


def _typo(name: str, pool: list[str], rng: random.Random) -> Optional[str]:
    """A misspelling of ``name`` whose unique nearest neighbour in ``pool`` is ``name``."""
    if len(name) < 5:
        return None
    for _ in range(10):
        i = rng.randrange(1, len(name) - 1)
        bad = name[:i] + name[i + 1:] if rng.random() < 0.5 else name[:i] + name[i] + name[i:]
        dists = sorted((edit_distance(bad, p), p.lower()) for p in pool)
        if bad.lower() in {p.lower() for p in pool}:
            continue
        if dists[0][1] == name.lower() and (len(dists) == 1 or dists[1][0] > dists[0][0]):
            return bad
    return None


def template_dataset(
    schema: DbSchema,
    n: int = 30,
    seed: int = 0,
    typo_rate: float = 0.3,
    values: Optional[Mapping[tuple[str, str], Sequence[str]]] = None,
) -> list[QueryPair]:
    """Questions from the baseline templates with their gold SQL.

    A share of questions misspell one table or column name so the repair
    stage has something to do. ``values`` maps (table, column) to literals
    usable in filter-equals questions.
    """
    rng = random.Random(seed)
    tables = schema.tables
    table_pool = schema.table_names
    col_pool = sorted({c.name for t in tables for c in t.columns})
    values = dict(values or {})
    pairs: list[QueryPair] = []
    families = ["count-rows", "list-column"]
    if any(c.col_type.value == "number" for t in tables for c in t.columns):
        families.append("max-min")
    if any(schema.has_column(t, c) for t, c in values):
        families.append("filter-equals")

    def maybe_typo(name: str, pool: list[str]) -> str:
        if rng.random() < typo_rate:
            return _typo(name, pool, rng) or name
        return name

    attempt = 0
    while len(pairs) < n:
        family = families[attempt % len(families)]
        attempt += 1
        table = rng.choice(tables)
        col = rng.choice(table.columns)
        t_word = maybe_typo(table.name, table_pool)
        if family == "count-rows":
            question = f"how many rows are in {t_word}"
            gold = f"SELECT count(*) FROM {table.name}"
        elif family == "list-column":
            question = f"list {maybe_typo(col.name, col_pool)} of {t_word}"
            gold = f"SELECT {col.name} FROM {table.name}"
        elif family == "max-min":
            numeric = [c for c in table.columns if c.col_type.value == "number"]
            if not numeric:
                continue
            col = rng.choice(numeric)
            agg = rng.choice(["max", "min"])
            question = f"what is the {agg} {maybe_typo(col.name, col_pool)} in {t_word}"
            gold = f"SELECT {agg}({col.name}) FROM {table.name}"
        else:
            options = [(c, values[(table.name, c.name)]) for c in table.columns
                       if (table.name, c.name) in values]
            if not options:
                continue
            where_col, vals = rng.choice(options)
            value = rng.choice(list(vals))
            question = f"list {col.name} of {t_word} where {where_col.name} is {value}"
            gold = f"SELECT {col.name} FROM {table.name} WHERE {where_col.name} = {_value(value)}"
        pairs.append(QueryPair(question, gold, schema.db_id, Split.TEST))
    return pairs
