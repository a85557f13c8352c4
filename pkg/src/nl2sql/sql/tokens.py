from __future__ import annotations

import enum
import re
from typing import NamedTuple


class SqlLexError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class TokenKind(str, enum.Enum):
    KEYWORD = "keyword"
    IDENTIFIER = "identifier"
    QUOTED_IDENTIFIER = "quoted_identifier"
    STRING_LITERAL = "string_literal"
    NUMBER_LITERAL = "number_literal"
    OPERATOR = "operator"
    PUNCTUATION = "punctuation"


class SqlToken(NamedTuple):
    kind: TokenKind
    text: str
    span: tuple[int, int]

    @property
    def upper(self) -> str:
        return self.text.upper()

    def is_kw(self, *words: str) -> bool:
        return self.kind is TokenKind.KEYWORD and self.text.upper() in words


KEYWORDS = frozenset(
    """
    SELECT DISTINCT ALL FROM WHERE GROUP BY HAVING ORDER ASC DESC LIMIT
    UNION INTERSECT EXCEPT JOIN INNER LEFT OUTER CROSS ON AS
    AND OR NOT IN LIKE BETWEEN IS NULL EXISTS
    """.split()
)

# Aggregate names are reserved but keep their lowercase spelling on output.
AGGREGATES = frozenset({"COUNT", "SUM", "AVG", "MIN", "MAX"})

OPERATORS = ("<>", "!=", ">=", "<=", "||", "=", "<", ">", "+", "-", "*", "/", "%")
PUNCTUATION = "(),.;"

_NUMBER = re.compile(r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?")
_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")


def is_keyword(word: str) -> bool:
    up = word.upper()
    return up in KEYWORDS or up in AGGREGATES


def tokenize(sql: str) -> list[SqlToken]:
    """Split ``sql`` into tokens. Whitespace is dropped; spans index ``sql``."""
    tokens: list[SqlToken] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            i += 1
            continue
        start = i
        if ch == "'" or ch == '"':
            j = i + 1
            while True:
                j = sql.find(ch, j)
                if j < 0:
                    what = "string literal" if ch == "'" else "quoted identifier"
                    raise SqlLexError(f"unterminated {what}", start)
                if j + 1 < n and sql[j + 1] == ch:  # doubled quote escape
                    j += 2
                    continue
                break
            i = j + 1
            kind = TokenKind.STRING_LITERAL if ch == "'" else TokenKind.QUOTED_IDENTIFIER
            if kind is TokenKind.QUOTED_IDENTIFIER and i - start == 2:
                raise SqlLexError("empty quoted identifier", start)
            tokens.append(SqlToken(kind, sql[start:i], (start, i)))
            continue
        m = _NUMBER.match(sql, i)
        if m and (ch.isdigit() or not (tokens and tokens[-1].kind is TokenKind.IDENTIFIER)):
            i = m.end()
            if i < n and (sql[i].isalpha() or sql[i] == "_"):
                raise SqlLexError("malformed number", start)
            tokens.append(SqlToken(TokenKind.NUMBER_LITERAL, m.group(), (start, i)))
            continue
        m = _WORD.match(sql, i)
        if m:
            i = m.end()
            word = m.group()
            kind = TokenKind.KEYWORD if is_keyword(word) else TokenKind.IDENTIFIER
            tokens.append(SqlToken(kind, word, (start, i)))
            continue
        for op in OPERATORS:
            if sql.startswith(op, i):
                i += len(op)
                tokens.append(SqlToken(TokenKind.OPERATOR, op, (start, i)))
                break
        else:
            if ch in PUNCTUATION:
                i += 1
                tokens.append(SqlToken(TokenKind.PUNCTUATION, ch, (start, i)))
            else:
                raise SqlLexError(f"unexpected character {ch!r}", start)
    return tokens
