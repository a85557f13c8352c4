from __future__ import annotations

import json
from pathlib import Path

import pytest

from nl2sql.evaluate import find_databases
from nl2sql.schema import load_flat_schema, load_spider_tables

FIXTURES = Path(__file__).parent / "fixtures"
MINI_SPIDER = FIXTURES / "mini_spider"
DB_DIR = FIXTURES / "database"
REPLAY = FIXTURES / "replay"

_ACCEPTANCE: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number n")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.user_properties and dict(report.user_properties).get("criterion")
    if marker:
        _ACCEPTANCE.setdefault(marker, []).append((report.nodeid, report.outcome))


def pytest_collection_modifyitems(items):
    # tag at collection time so tests skipped during setup are still reported
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        outcomes = [o for _, o in _ACCEPTANCE[n]]
        if any(o == "failed" for o in outcomes):
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        detail = ", ".join(f"{nodeid.split('::')[-1]}={o}" for nodeid, o in _ACCEPTANCE[n])
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  ({detail})")


@pytest.fixture(scope="session")
def spider_schemas():
    return {s.db_id: s for s in load_spider_tables(MINI_SPIDER / "tables.json")}


@pytest.fixture(scope="session")
def utility(spider_schemas):
    return spider_schemas["utility"]


@pytest.fixture(scope="session")
def readings_schema():
    return load_flat_schema(FIXTURES / "readings_example.schema")


@pytest.fixture(scope="session")
def dbs():
    return find_databases(DB_DIR)


@pytest.fixture(scope="session")
def corpus():
    out = []
    for line in (FIXTURES / "corpus.tsv").read_text().splitlines():
        db_id, sql = line.split("\t", 1)
        out.append((db_id, sql))
    return out


@pytest.fixture(scope="session")
def replay_expected():
    return json.loads((REPLAY / "expected.json").read_text())
