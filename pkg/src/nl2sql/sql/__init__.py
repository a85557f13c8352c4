"""Tokenizer, parser, printer and clause decomposition for Spider-style SQL."""

from .ast import Query, Select, SetOp
from .components import ComponentSet, canonicalize, decompose
from .parser import SqlSyntaxError, parse, parse_tokens
from .printer import serialize
from .tokens import SqlLexError, SqlToken, TokenKind, tokenize

SqlError = (SqlLexError, SqlSyntaxError)


def canonical_sql(sql: str) -> str:
    """Case-insensitive canonical form used by string-mode exact match."""
    return serialize(parse(sql), fold_case=True)


__all__ = [
    "ComponentSet", "Query", "Select", "SetOp", "SqlError", "SqlLexError", "SqlSyntaxError",
    "SqlToken", "TokenKind", "canonical_sql", "canonicalize", "decompose", "parse",
    "parse_tokens", "serialize", "tokenize",
]
