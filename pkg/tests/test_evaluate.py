import json
import sqlite3
import threading
import time
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nl2sql.corrupt import corruption_corpus
from nl2sql.dataset import (
    AlignmentError,
    QueryPair,
    Split,
    compose_test2,
    ingest_custom,
    read_predictions,
    read_spider_pairs,
)
from nl2sql.evaluate import (
    EvalOptions,
    EvalReport,
    ExecutionError,
    FailureReason,
    ResultTable,
    StatementTimeout,
    compare_forms,
    evaluate_corpus,
    exact_match,
    execute,
    execution_match,
    format_percent,
    results_match,
)
from nl2sql.sql import decompose, parse

from conftest import FIXTURES, REPLAY


@pytest.fixture
def retail(dbs):
    return dbs["retail"]


# -- exact match -------------------------------------------------------------


def test_string_match_ignores_case_and_spacing():
    assert exact_match("SELECT name FROM meters", "select   name from METERS", "string")


def test_conjunct_order():
    gold = "SELECT id FROM meters WHERE a = 1 AND b = 2"
    pred = "SELECT id FROM meters WHERE b = 2 AND a = 1"
    # oracle: the component sets of both orderings, computed directly
    assert decompose(parse(gold)) == decompose(parse(pred))
    assert not exact_match(gold, pred, "string")
    assert exact_match(gold, pred, "component")


def test_unparseable_prediction():
    m = compare_forms("SELECT name FROM meters", "SELEKT x")
    assert m == type(m)(False, False, parse_error=True)
    assert not exact_match("SELECT name FROM meters", "SELEKT x", "component")


def test_unknown_mode():
    with pytest.raises(ValueError):
        exact_match("SELECT 1", "SELECT 1", "fuzzy")


def test_string_literals_keep_case():
    assert not exact_match("SELECT a FROM t WHERE c = 'X'", "SELECT a FROM t WHERE c = 'x'")


def test_drop_values():
    gold, pred = "SELECT a FROM t WHERE b = 1", "SELECT a FROM t WHERE b = 7"
    assert not exact_match(gold, pred, "component")
    assert exact_match(gold, pred, "string", drop_values=True)
    assert exact_match(gold, pred, "component", drop_values=True)


# -- execution ---------------------------------------------------------------


def test_count_on_three_row_fixture(retail):
    with sqlite3.connect(retail.path) as raw:
        (n,) = raw.execute("SELECT count(*) FROM stores").fetchone()
    assert n == 3
    assert execute("SELECT count(*) FROM stores", retail).rows == ((3,),)


def test_missing_table_is_execution_error(retail):
    with pytest.raises(ExecutionError):
        execute("SELECT * FROM nonexistent", retail)


def test_order_by_city(retail):
    rows = execute("SELECT city FROM stores ORDER BY city", retail).rows
    assert list(rows) == sorted(rows)
    assert len(rows) == 3


def test_fixture_is_read_only(retail):
    with pytest.raises(ExecutionError):
        execute("DELETE FROM stores", retail)
    assert execute("SELECT count(*) FROM stores", retail).rows == ((3,),)


def test_statement_timeout(retail):
    endless = ("WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) "
               "SELECT count(*) FROM c")
    start = time.monotonic()
    with pytest.raises(StatementTimeout):
        execute(endless, retail, timeout=0.2)
    assert time.monotonic() - start < 3
    # the connection is still usable afterwards
    assert execute("SELECT count(*) FROM stores", retail).rows == ((3,),)


def test_timeout_recorded_in_verdict(retail):
    pair = QueryPair("q", "SELECT count(*) FROM stores", "retail", Split.TEST)
    pred = "SELECT count(*) FROM stores AS a, stores AS b, stores AS c, stores AS d, " \
           "stores AS e, stores AS f, stores AS g, stores AS h, stores AS i, stores AS j, " \
           "stores AS k, stores AS l, stores AS m, stores AS n, stores AS o, stores AS p"
    report = evaluate_corpus([pair], [pred], {}, {"retail": retail}, EvalOptions(timeout=0.2))
    (v,) = report.verdicts
    assert v.execution is False and v.failure_reason is FailureReason.TIMEOUT
    assert report.failure_counts == {"timeout": 1}


def test_distinct_vs_group_by(retail):
    gold, pred = "SELECT DISTINCT city FROM stores", "SELECT city FROM stores GROUP BY city"
    assert execution_match(gold, pred, retail) is True
    assert not exact_match(gold, pred, "string")
    assert not exact_match(gold, pred, "component")


def test_identical_queries_match(retail):
    assert execution_match("SELECT * FROM stores", "SELECT * FROM stores", retail) is True


def test_extra_column_fails(retail):
    assert execution_match("SELECT city FROM stores", "SELECT city, id FROM stores", retail) is False


def test_gold_failure_is_absent(retail):
    assert execution_match("SELECT nope FROM stores", "SELECT city FROM stores", retail) is None


def test_pred_failure_is_false(retail):
    assert execution_match("SELECT city FROM stores", "SELECT nope FROM stores", retail) is False


def test_bag_semantics(retail):
    # duplicates matter; order does not
    assert execution_match("SELECT city FROM stores", "SELECT city FROM stores ORDER BY city DESC", retail)
    assert not execution_match("SELECT city FROM stores", "SELECT DISTINCT city FROM stores", retail)


def test_order_matters_only_under_gold_order_by(retail):
    asc = "SELECT city FROM stores ORDER BY city"
    desc = "SELECT city FROM stores ORDER BY city DESC"
    assert execution_match(asc, desc, retail) is False
    assert execution_match("SELECT city FROM stores", desc, retail) is True


def test_real_tolerance():
    a = ResultTable(("x",), ((1.0,), (2.5,)))
    assert results_match(a, ResultTable(("y",), ((2.5 * (1 + 1e-9),), (1.0,))), ordered=False)
    assert not results_match(a, ResultTable(("y",), ((1.0,), (2.5 * (1 + 1e-4),))), ordered=False)
    # integers and reals compare numerically
    assert results_match(ResultTable(("x",), ((2,),)), ResultTable(("x",), ((2.0,),)), ordered=True)
    assert not results_match(ResultTable(("x",), (("2",),)), ResultTable(("x",), ((2,),)), ordered=True)


def test_result_table_rectangular():
    with pytest.raises(ValueError):
        ResultTable(("a", "b"), ((1,),))


def test_mixed_numeric_column_goes_real(retail):
    rows = execute("SELECT 1 UNION ALL SELECT 2.5", retail).rows
    assert all(isinstance(r[0], float) for r in rows)


# -- corpus evaluation -------------------------------------------------------


def _pairs(n, split=Split.TEST):
    return [QueryPair(f"q{i}", f"SELECT id FROM stores WHERE id = {i}", "retail", split) for i in range(n)]


def test_three_of_four(dbs):
    pairs = _pairs(4)
    preds = [p.gold_sql for p in pairs[:3]] + ["SELECT city FROM stores"]
    report = evaluate_corpus(pairs, preds, {}, dbs)
    assert report.exact_match_accuracy == Fraction(3, 4)
    assert report.summary().startswith("exact(string)=3/4")


def test_alignment_error():
    with pytest.raises(AlignmentError):
        evaluate_corpus(_pairs(3), ["SELECT 1"], {}, {})


def test_no_database_means_no_execution_verdict():
    report = evaluate_corpus(_pairs(2), [p.gold_sql for p in _pairs(2)], {}, {})
    assert [v.execution for v in report.verdicts] == [None, None]
    assert report.execution_accuracy == 0 and report.n_executable == 0


def test_labels():
    assert evaluate_corpus(_pairs(1), ["x"], {}, {}).test_label == "test1"
    mixed = _pairs(1) + _pairs(1, Split.TRAIN)
    assert evaluate_corpus(mixed, ["x", "x"], {}, {}).test_label == "test2"
    assert evaluate_corpus(_pairs(1), ["x"], {}, {}, EvalOptions(label="custom")).test_label == "custom"


def test_test2_composition(utility, dbs):
    custom, _ = ingest_custom(FIXTURES / "utility_custom.jsonl", utility)
    test = [p for p in custom if p.split is Split.TEST]
    train = [p for p in custom if p.split is Split.TRAIN]
    both = compose_test2(test, train)
    assert len(both) == len(test) + len(train) == 20
    report = evaluate_corpus(both, [p.gold_sql for p in both], {"utility": utility}, dbs)
    assert report.total == 20 and report.test_label == "test2"
    assert report.exact_match_accuracy == 1


def test_verdict_order_under_parallelism(dbs):
    pairs = _pairs(40)
    preds = [p.gold_sql if i % 3 else "SELECT 0" for i, p in enumerate(pairs)]
    serial = evaluate_corpus(pairs, preds, {}, dbs, EvalOptions(parallelism=1))
    parallel = evaluate_corpus(pairs, preds, {}, dbs, EvalOptions(parallelism=8))
    assert [v.index for v in parallel.verdicts] == list(range(40))
    assert parallel.verdicts == serial.verdicts


def test_one_connection_per_thread(retail):
    seen = []
    barrier = threading.Barrier(4)

    def grab():
        seen.append(retail.connection())
        barrier.wait()  # keep every thread alive until all have connected

    threads = [threading.Thread(target=grab) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len({id(c) for c in seen}) == 4


def test_replay_fixture(spider_schemas, dbs, replay_expected):
    pairs = read_spider_pairs(REPLAY / "dev.json", Split.TEST)
    preds = read_predictions(REPLAY / "predictions.jsonl")
    report = evaluate_corpus(pairs, preds, spider_schemas, dbs)
    assert report.component_match_accuracy == Fraction(14, 20)
    assert report.execution_accuracy == Fraction(17, 19)
    assert report.exact_match_accuracy == Fraction(8, 20)
    got = json.loads(report.to_json())
    for key in ("exact_string", "exact_component", "execution", "failure_counts"):
        assert got[key] == replay_expected[key], key
    for mine, hand in zip(got["verdicts"], replay_expected["verdicts"]):
        for key in ("exact_string", "exact_component", "execution", "failure_reason"):
            assert mine[key] == hand[key], (mine["index"], key)


def test_report_json_round_trip(spider_schemas, dbs):
    pairs = read_spider_pairs(REPLAY / "dev.json", Split.TEST)
    preds = read_predictions(REPLAY / "predictions.jsonl")
    report = evaluate_corpus(pairs, preds, spider_schemas, dbs, EvalOptions(repair=True))
    again = EvalReport.from_dict(json.loads(report.to_json()))
    assert again == report
    assert again.to_json() == report.to_json()


def test_aggregates_are_exact_counts(spider_schemas, dbs):
    pairs = read_spider_pairs(REPLAY / "dev.json", Split.TEST)
    report = evaluate_corpus(pairs, read_predictions(REPLAY / "predictions.jsonl"), spider_schemas, dbs)
    v = report.verdicts
    assert report.exact_match_accuracy == Fraction(sum(x.exact_string for x in v), len(v))
    executable = [x for x in v if x.execution is not None]
    assert report.execution_accuracy == Fraction(sum(x.execution for x in executable), len(executable))
    for acc in (report.exact_match_accuracy, report.component_match_accuracy, report.execution_accuracy):
        assert isinstance(acc, Fraction) and 0 <= acc <= 1


# -- invariants over the corpus ----------------------------------------------


def test_reflexivity(corpus):
    for _, sql in corpus:
        assert exact_match(sql, sql, "string"), sql


def test_implications_over_corpus(corpus, spider_schemas, dbs):
    pairs, preds = [], []
    for i, (db_id, sql) in enumerate(corpus):
        pairs.append(QueryPair(f"q{i}", sql, db_id, Split.TEST))
        # pair each query with its neighbour in the same database (mostly mismatches) and itself
        j = (i + 1) % len(corpus)
        preds.append(corpus[j][1] if corpus[j][0] == db_id else sql)
    for verdict in evaluate_corpus(pairs, preds, spider_schemas, dbs).verdicts:
        if verdict.exact_string:
            assert verdict.exact_component
            assert verdict.execution in (True, None)


def test_repair_monotonicity(corpus, spider_schemas, dbs):
    corrupted = corruption_corpus(corpus, spider_schemas, 120, seed=3)
    pairs = [QueryPair(f"q{i}", c.original_sql, db, Split.TEST) for i, (db, c) in enumerate(corrupted)]
    preds = [c.corrupted_sql for _, c in corrupted]
    off = evaluate_corpus(pairs, preds, spider_schemas, dbs, EvalOptions(repair=False))
    on = evaluate_corpus(pairs, preds, spider_schemas, dbs, EvalOptions(repair=True))
    assert on.exact_match_accuracy >= off.exact_match_accuracy
    assert on.component_match_accuracy >= off.component_match_accuracy
    assert on.exact_match_accuracy == 1
    assert all(v.repaired for v in on.verdicts)


# -- formatting --------------------------------------------------------------


@pytest.mark.parametrize("num,den,text", [
    (374, 513, "72.9%"),
    (1, 8, "12.5%"),
    (1, 3, "33.3%"),
    (2, 3, "66.7%"),
    (0, 5, "0.0%"),
    (5, 5, "100.0%"),
    (1, 16, "6.3%"),  # exactly 6.25 rounds up
])
def test_format_percent(num, den, text):
    assert format_percent(Fraction(num, den)) == text


def test_format_percent_places():
    assert format_percent(Fraction(1, 3), places=0) == "33%"
    assert format_percent(Fraction(1, 3), places=2) == "33.33%"


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5000), st.integers(1, 5000))
def test_format_percent_matches_decimal_oracle(num, den):
    from decimal import ROUND_HALF_UP, Decimal, localcontext

    if num > den:
        num, den = den, num
    with localcontext() as ctx:
        ctx.prec = 50
        expected = (Decimal(num) * 100 / Decimal(den)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    assert format_percent(Fraction(num, den)) == f"{expected}%"
