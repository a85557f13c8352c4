import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nl2sql.dataset import (
    AlignmentError,
    DatasetError,
    QueryPair,
    SchemaElement,
    Split,
    TrainingExample,
    assemble_training,
    compose_test2,
    compute_stats,
    coverage_report,
    eval_label,
    ingest_custom,
    ingest_spider,
    read_custom_pairs,
    read_predictions,
    read_spider_pairs,
    read_training_tsv,
    serialize_prompt,
    write_custom_pairs,
    write_predictions,
    write_training_tsv,
)
from nl2sql.schema import Column, ColumnType, DbSchema, Table, schema_to_spider

from conftest import FIXTURES, MINI_SPIDER

SHOP = DbSchema("shop", (
    Table("stores", (Column("id", ColumnType.NUMBER), Column("city"))),
    Table("sales", (Column("id", ColumnType.NUMBER), Column("store_id", ColumnType.NUMBER))),
))


def _write_spider(tmp_path, train, dev, schemas=(SHOP,)):
    (tmp_path / "tables.json").write_text(json.dumps([schema_to_spider(s) for s in schemas]))
    for name, records in (("train.json", train), ("dev.json", dev)):
        (tmp_path / name).write_text(json.dumps(
            [{"question": q, "query": s, "db_id": d} for q, s, d in records]))
    return tmp_path / "train.json", tmp_path / "dev.json", tmp_path / "tables.json"


def test_mini_spider_hand_counted_totals():
    # train_spider.json holds 9 records, dev.json 5, tables.json 3 databases
    pairs, stats = ingest_spider(MINI_SPIDER / "train_spider.json", MINI_SPIDER / "dev.json",
                                 MINI_SPIDER / "tables.json")
    assert (stats.n_train, stats.n_test, stats.n_databases) == (9, 5, 3)
    assert len(pairs) == stats.total == 14
    assert stats.unparseable == []


def test_empty_spider_files(tmp_path):
    _, stats = ingest_spider(*_write_spider(tmp_path, [], []))
    assert (stats.n_train, stats.n_test) == (0, 0)
    assert all(n == 0 for n in stats.coverage.values())


def test_three_record_fixture_hand_counted(tmp_path):
    train = [
        ("Which cities have stores?", "SELECT city FROM stores", "shop"),
        ("Cities with sales", "SELECT T1.city FROM stores AS T1 JOIN sales AS T2 ON T1.id = T2.store_id", "shop"),
    ]
    dev = [("Sales in store 2", "SELECT count(*) FROM sales WHERE store_id = 2", "shop")]
    _, stats = ingest_spider(*_write_spider(tmp_path, train, dev))
    assert (stats.n_train, stats.n_test, stats.n_databases) == (2, 1, 1)
    by_name = {str(el): n for el, n in stats.coverage.items()}
    assert by_name == {
        "stores": 2, "stores.id": 1, "stores.city": 2,
        "sales": 2, "sales.id": 0, "sales.store_id": 2,
    }


def test_missing_field_names_record(tmp_path):
    path = tmp_path / "dev.json"
    path.write_text(json.dumps([{"question": "q", "query": "SELECT 1", "db_id": "d"}, {"question": "q"}]))
    with pytest.raises(DatasetError, match="record 1"):
        read_spider_pairs(path, "test")


def test_query_pair_validation():
    with pytest.raises(DatasetError):
        QueryPair("", "SELECT 1", "d", Split.TRAIN)
    with pytest.raises(DatasetError):
        QueryPair("q", "  ", "d", Split.TRAIN)


CUSTOM_LINES = [
    {"question": "usage", "sql": "SELECT usage_kwh FROM readings", "split": "train"},
    {"question": "peak", "sql": "SELECT max(usage_kwh) FROM readings", "split": "train"},
    {"question": "big", "sql": "SELECT meter_id FROM readings WHERE usage_kwh > 100", "split": "train"},
    {"question": "count", "sql": "SELECT count(*) FROM meters", "split": "train"},
    {"question": "where", "sql": "SELECT location FROM meters", "split": "test"},
]


def _jsonl(tmp_path, records, name="custom.jsonl"):
    path = tmp_path / name
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def test_custom_five_lines(tmp_path, utility):
    pairs, stats = ingest_custom(_jsonl(tmp_path, CUSTOM_LINES), utility)
    assert (stats.n_train, stats.n_test) == (4, 1)
    assert all(p.db_id == "utility" for p in pairs)
    assert stats.count("usage_kwh") == 3
    assert stats.coverage[SchemaElement("utility", "readings", "usage_kwh")] == 3


def test_custom_missing_sql_names_line(tmp_path, utility):
    records = CUSTOM_LINES[:2] + [{"question": "q", "split": "train"}]
    with pytest.raises(DatasetError, match=r"custom.jsonl:3: missing field 'sql'"):
        ingest_custom(_jsonl(tmp_path, records), utility)


def test_custom_unknown_split(tmp_path, utility):
    with pytest.raises(DatasetError, match="unknown split"):
        ingest_custom(_jsonl(tmp_path, [{"question": "q", "sql": "SELECT 1", "split": "dev"}]), utility)


def test_unparseable_gold_flagged_not_counted(tmp_path, utility):
    records = CUSTOM_LINES + [{"question": "odd", "sql": "SELECT usage_kwh FROM readings QUALIFY 1", "split": "train"}]
    pairs, stats = ingest_custom(_jsonl(tmp_path, records), utility)
    assert len(pairs) == 6 and stats.unparseable == [5]
    assert stats.count("usage_kwh") == 3


def test_custom_round_trip(tmp_path):
    pairs = read_custom_pairs(FIXTURES / "utility_custom.jsonl", "utility")
    write_custom_pairs(pairs, tmp_path / "again.jsonl")
    assert read_custom_pairs(tmp_path / "again.jsonl", "utility") == pairs


def test_custom_fixture_counts():
    pairs = read_custom_pairs(FIXTURES / "utility_custom.jsonl", "utility")
    assert sum(p.split is Split.TRAIN for p in pairs) == 16
    assert sum(p.split is Split.TEST for p in pairs) == 4


def test_coverage_uncovered_table(utility):
    pairs = [QueryPair("q", "SELECT location FROM meters", "utility", Split.TRAIN)] * 2
    report = coverage_report(pairs, [utility])
    assert SchemaElement("utility", "tariffs") in report.uncovered
    assert SchemaElement("utility", "meters", "location") not in report.uncovered


def test_coverage_seen_once_is_uncovered(utility):
    pairs = [QueryPair("q", "SELECT rate FROM tariffs", "utility", Split.TRAIN)]
    report = coverage_report(pairs, [utility], threshold=2)
    assert SchemaElement("utility", "tariffs", "rate") in report.uncovered
    assert SchemaElement("utility", "tariffs", "rate") not in coverage_report(pairs, [utility], 1).uncovered


def test_coverage_fixture_fully_covered(utility):
    pairs = read_custom_pairs(FIXTURES / "utility_custom.jsonl", "utility")
    report = coverage_report(pairs, [utility])
    assert report.fully_covered and report.uncovered == []


def test_coverage_alias_invariant(utility):
    a = [QueryPair("q", "SELECT T1.location FROM meters AS T1 JOIN sites AS T2 ON T1.site_id = T2.id", "utility", Split.TRAIN)]
    b = [QueryPair("q", "SELECT m.location FROM meters m JOIN sites s ON m.site_id = s.id", "utility", Split.TRAIN)]
    c = [QueryPair("q", "SELECT meters.location FROM meters JOIN sites ON meters.site_id = sites.id", "utility", Split.TRAIN)]
    stats = [compute_stats(x, {"utility": utility}).coverage for x in (a, b, c)]
    assert stats[0] == stats[1] == stats[2]


def test_unknown_db_id_rejected(utility):
    with pytest.raises(DatasetError, match="unknown db_id"):
        compute_stats([QueryPair("q", "SELECT 1", "nope", Split.TEST)], {"utility": utility})


# -- prompts and training export -------------------------------------------------


def test_prompt_exact_format():
    schema = DbSchema("utility", (Table("meters", (Column("id"), Column("location"))),))
    pair = QueryPair("How many meters are there?", "SELECT count(*) FROM meters", "utility", Split.TRAIN)
    assert serialize_prompt(pair, schema) == \
        "translate to SQL: How many meters are there? | db: utility | meters: id, location"
    assert serialize_prompt(pair, schema, include_schema=False) == \
        "translate to SQL: How many meters are there? | db: utility"


def test_prompt_escapes_pipe():
    pair = QueryPair("a | b", "SELECT 1", "shop", Split.TRAIN)
    assert serialize_prompt(pair, SHOP).startswith("translate to SQL: a \\| b | db: shop")


def test_prompt_two_tables_in_declaration_order():
    pair = QueryPair("q", "SELECT 1", "shop", Split.TRAIN)
    assert serialize_prompt(pair, SHOP).endswith("| stores: id, city | sales: id, store_id")


def _pairs(n, split, db="shop", tag=""):
    return [QueryPair(f"{tag}q{i}", f"SELECT {i}", db, split) for i in range(n)]


def test_assemble_two_plus_three():
    spider = _pairs(2, Split.TRAIN, tag="s")
    custom = _pairs(3, Split.TRAIN, tag="c")
    out = assemble_training(spider, custom, {"shop": SHOP})
    assert [ex.target for ex in out] == ["SELECT 0", "SELECT 1", "SELECT 0", "SELECT 1", "SELECT 2"]
    assert [ex.source.split(":")[1].split("|")[0].strip() for ex in out] == ["sq0", "sq1", "cq0", "cq1", "cq2"]


def test_assemble_empty_custom_passes_spider_through():
    spider = _pairs(4, Split.TRAIN)
    assert len(assemble_training(spider, [], {"shop": SHOP})) == 4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30), st.integers(0, 30))
def test_assemble_length_property(s_train, s_test, c_train, c_test):
    spider = _pairs(s_train, Split.TRAIN) + _pairs(s_test, Split.TEST)
    custom = _pairs(c_train, Split.TRAIN) + _pairs(c_test, Split.TEST)
    assert len(assemble_training(spider, custom, {"shop": SHOP})) == s_train + c_train


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.text(min_size=1), st.text(min_size=1)), max_size=10))
def test_training_tsv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("tsv") / "train.tsv"
    examples = [TrainingExample(s, t) for s, t in rows]
    assert write_training_tsv(examples, path) == len(examples)
    assert read_training_tsv(path) == examples


def test_training_tsv_header(tmp_path):
    write_training_tsv([TrainingExample("a\tb", "c\nd")], tmp_path / "t.tsv")
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert lines == ["# nl2sql-prompt/1", "source\ttarget", "a\\tb\tc\\nd"]


# -- evaluation sets and predictions ----------------------------------------------


def test_eval_labels():
    test, train = _pairs(2, Split.TEST), _pairs(3, Split.TRAIN)
    assert eval_label(test) == "test1"
    assert eval_label(compose_test2(test, train)) == "test2"
    assert len(compose_test2(test, train)) == 5
    assert eval_label(train) == "custom"


def test_predictions_jsonl_and_plain(tmp_path):
    sqls = ["SELECT 1", "SELECT 'a\tb'", ""]
    write_predictions(sqls, tmp_path / "p.jsonl")
    assert read_predictions(tmp_path / "p.jsonl") == sqls
    write_predictions(sqls[:2], tmp_path / "p.txt", fmt="text")
    assert read_predictions(tmp_path / "p.txt") == sqls[:2]


def test_predictions_jsonl_out_of_order_is_realigned(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text('{"index": 1, "sql": "B"}\n{"index": 0, "sql": "A"}\n')
    assert read_predictions(path) == ["A", "B"]


@pytest.mark.parametrize("body,match", [
    ('{"index": 0, "sql": "A"}\n{"index": 2, "sql": "C"}\n', "not contiguous"),
    ('{"index": 0, "sql": "A"}\n{"index": 0, "sql": "B"}\n', "duplicate"),
    ('{"index": 0}\n', "expected"),
])
def test_predictions_misalignment(tmp_path, body, match):
    path = tmp_path / "p.jsonl"
    path.write_text(body)
    with pytest.raises(AlignmentError, match=match):
        read_predictions(path)
