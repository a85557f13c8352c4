"""Translate -> repair -> score, either live against a backend or staged via files."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Optional, Sequence

from .backend import Backend, NoTemplateMatch, TranslationRequest
from .dataset import QueryPair
from .evaluate import Database, EvalOptions, EvalReport, evaluate_corpus
from .schema import DbSchema


def translate_all(
    pairs: Sequence[QueryPair],
    backend: Backend,
    schemas: Mapping[str, DbSchema],
    parallelism: int = 4,
    include_schema: bool = True,
) -> list[str]:
    """Raw backend output for every pair, in dataset order.

    A baseline template miss yields an empty prediction (scored as a parse
    error); transport and backend errors propagate.
    """

    def one(i: int) -> str:
        pair = pairs[i]
        schema = schemas.get(pair.db_id) if include_schema else None
        try:
            return backend.translate(TranslationRequest.for_pair(pair, schema, i)).sql
        except NoTemplateMatch:
            return ""

    if parallelism <= 1:
        return [one(i) for i in range(len(pairs))]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, range(len(pairs))))


def evaluate_backend(
    pairs: Sequence[QueryPair],
    backend: Backend,
    schemas: Mapping[str, DbSchema],
    dbs: Mapping[str, Database],
    options: Optional[EvalOptions] = None,
) -> EvalReport:
    options = options or EvalOptions()
    predictions = translate_all(pairs, backend, schemas, options.parallelism)
    return evaluate_corpus(pairs, predictions, schemas, dbs, options)
