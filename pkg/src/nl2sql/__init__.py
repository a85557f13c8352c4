"""Non-model parts of a natural-language-to-SQL pipeline.

Dataset ingestion and coverage, training export, schema-aware SQL repair,
and exact-match / execution-accuracy evaluation on SQLite databases.
"""

from .dataset import QueryPair, Split
from .evaluate import EvalOptions, EvalReport, evaluate_corpus
from .repair import RepairReport, repair
from .schema import DbSchema, load_schemas

__version__ = "0.1.0"

__all__ = [
    "DbSchema",
    "EvalOptions",
    "EvalReport",
    "QueryPair",
    "RepairReport",
    "Split",
    "evaluate_corpus",
    "load_schemas",
    "repair",
]
