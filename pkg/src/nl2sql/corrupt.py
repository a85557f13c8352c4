"""Seeded single-identifier corruptions of schema-valid queries.

Each corruption misspells one table or column name with one or two random
character edits, and is kept only if the original name is the unique
nearest valid name within the repair threshold, so a correct repair must
restore the query exactly.
"""

from __future__ import annotations

import random
import re
import string
from dataclasses import dataclass
from typing import Optional, Sequence

from .repair import DEFAULT_THRESHOLD, Role, edit_distance, identifier_slots
from .schema import DbSchema
from .sql import parse_tokens, tokenize
from .sql.tokens import is_keyword

_PLAIN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_ALPHABET = string.ascii_lowercase + "_"


@dataclass(frozen=True)
class Corruption:
    original_sql: str
    corrupted_sql: str
    token_index: int
    original_name: str
    corrupted_name: str


def _mutate(name: str, rng: random.Random, n_edits: int) -> str:
    chars = list(name)
    for _ in range(n_edits):
        op = rng.choice(("insert", "delete", "substitute"))
        if op == "delete" and len(chars) > 1:
            del chars[rng.randrange(len(chars))]
        elif op == "substitute":
            i = rng.randrange(len(chars))
            chars[i] = rng.choice(_ALPHABET.replace(chars[i].lower(), ""))
        else:
            chars.insert(rng.randrange(len(chars) + 1), rng.choice(_ALPHABET))
    return "".join(chars)


def corrupt_query(
    sql: str,
    schema: DbSchema,
    rng: random.Random,
    max_edits: int = 2,
    threshold: int = DEFAULT_THRESHOLD,
    attempts: int = 100,
) -> Optional[Corruption]:
    tokens = tokenize(sql)
    slots, local_names = identifier_slots(parse_tokens(tokens))
    targets = []
    for slot in slots:
        if slot.role is Role.COLUMN and slot.checkable and schema.owners_of(slot.ident.name):
            targets.append((slot, sorted({c.lower() for t in schema.tables for c in
                                          (col.name for col in t.columns)})))
        elif slot.role is not Role.COLUMN and schema.table(slot.ident.name):
            targets.append((slot, [t.lower() for t in schema.table_names]))
    if not targets:
        return None
    taken = {t.lower() for t in schema.table_names} | {
        c.name.lower() for t in schema.tables for c in t.columns
    } | local_names

    for _ in range(attempts):
        slot, pool = rng.choice(targets)
        name = slot.ident.name
        bad = _mutate(name, rng, rng.randint(1, max_edits))
        if not _PLAIN.fullmatch(bad) or is_keyword(bad) or bad.lower() in taken:
            continue
        dists = sorted((edit_distance(bad, p), p) for p in pool)
        best_d, best = dists[0]
        if best != name.lower() or best_d > threshold:
            continue
        if len(dists) > 1 and dists[1][0] == best_d:
            continue
        tok = tokens[slot.token_index]
        text = f'"{bad}"' if tok.text.startswith('"') else bad
        start, end = tok.span
        return Corruption(sql, sql[:start] + text + sql[end:], slot.token_index, name, bad)
    return None


def corruption_corpus(
    queries: Sequence[tuple[str, str]],
    schemas: dict[str, DbSchema],
    n: int,
    seed: int = 0,
    max_edits: int = 2,
    threshold: int = DEFAULT_THRESHOLD,
) -> list[tuple[str, Corruption]]:
    """``n`` corruptions drawn round-robin from ``(db_id, sql)`` queries."""
    rng = random.Random(seed)
    out: list[tuple[str, Corruption]] = []
    misses = 0
    i = 0
    while len(out) < n:
        db_id, sql = queries[i % len(queries)]
        i += 1
        c = corrupt_query(sql, schemas[db_id], rng, max_edits, threshold)
        if c is None:
            misses += 1
            if misses > 10 * n + len(queries):
                raise ValueError("could not generate enough corruptions from these queries")
            continue
        out.append((db_id, c))
    return out
