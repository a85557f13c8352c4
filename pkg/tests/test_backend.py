import json
import random
import socket
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from nl2sql.backend import (
    PROTO_HEADER,
    BackendError,
    BaselineBackend,
    HttpBackend,
    NoTemplateMatch,
    ReplayBackend,
    TranslationRequest,
    TransportError,
    baseline_translate,
    serve_mock,
    template_dataset,
)
from nl2sql.dataset import AlignmentError, QueryPair, Split, write_predictions
from nl2sql.pipeline import translate_all
from nl2sql.repair import repair


def req(question, db_id="utility", index=None):
    return TranslationRequest(question, db_id, "", index)


def test_request_validation():
    with pytest.raises(ValueError):
        TranslationRequest("", "utility")
    with pytest.raises(ValueError):
        TranslationRequest("q", "")


def test_replay_lookup_by_index(tmp_path):
    path = tmp_path / "preds.txt"
    path.write_text("SELECT 0\nSELECT 1\nSELECT 2\nSELECT count(*) FROM meters\n")
    backend = ReplayBackend(path)
    resp = backend.translate(req("anything", index=3))
    assert resp.sql == "SELECT count(*) FROM meters"
    assert resp.backend_id == "replay" and resp.latency_ms >= 0


def test_replay_index_miss():
    backend = ReplayBackend(["SELECT 1"])
    with pytest.raises(AlignmentError):
        backend.translate(req("q", index=1))
    with pytest.raises(AlignmentError):
        backend.translate(req("q"))


def test_replay_round_trips_backend_output(tmp_path, utility):
    pairs = template_dataset(utility, 12, seed=3)
    raw = translate_all(pairs, BaselineBackend(utility), {"utility": utility})
    write_predictions(raw, tmp_path / "p.jsonl")
    assert translate_all(pairs, ReplayBackend(tmp_path / "p.jsonl"), {"utility": utility}) == raw


@pytest.mark.parametrize("question,sql", [
    ("how many rows are in meters", "SELECT count(*) FROM meters"),
    ("How many rows are there in the readings?", "SELECT count(*) FROM readings"),
    ("list location of meters", "SELECT location FROM meters"),
    ("what is the max usage_kwh in readings", "SELECT max(usage_kwh) FROM readings"),
    ("what is the lowest rate of tariffs", "SELECT min(rate) FROM tariffs"),
    ("list name of sites where city is Vancouver", "SELECT name FROM sites WHERE city = 'Vancouver'"),
    ("show id of meters where installed_year = 2015", "SELECT id FROM meters WHERE installed_year = 2015"),
])
def test_baseline_templates(utility, question, sql):
    assert baseline_translate(question, utility) == sql


def test_baseline_keeps_misspellings_for_repair(utility):
    assert baseline_translate("list locaton of meterz", utility) == "SELECT locaton FROM meterz"


def test_baseline_no_match(utility):
    with pytest.raises(NoTemplateMatch):
        baseline_translate("colourless green ideas sleep furiously", utility)


def test_baseline_backend_is_referentially_transparent(utility):
    backend = BaselineBackend(utility)
    r = req("how many rows are in meters")
    assert backend.translate(r).sql == backend.translate(r).sql
    assert r == req("how many rows are in meters")


def test_http_backend_against_mock():
    with serve_mock(canned={"q1": "SELECT 1"}) as server:
        with HttpBackend(server.url) as backend:
            resp = backend.translate(req("q1"))
    assert resp.sql == "SELECT 1" and resp.backend_id == "http"


def test_mock_wire_protocol():
    with serve_mock(canned={"q1": "s1"}) as server:
        url = server.url + "/translate"
        ok = httpx.post(url, json={"question": "q1", "db_id": "d", "schema": ""},
                        headers={PROTO_HEADER: "1"})
        assert ok.status_code == 200 and ok.json() == {"sql": "s1"}
        assert ok.headers[PROTO_HEADER] == "1"
        assert httpx.post(url, json={"question": "nope", "db_id": "d"}).status_code == 404
        assert httpx.post(url, content=b"{not json").status_code == 400
        assert httpx.post(url, json={"question": "q1"}, headers={PROTO_HEADER: "9"}).status_code == 400


def test_mock_default_answer():
    with serve_mock(default="SELECT 42") as server:
        with HttpBackend(server.url) as backend:
            assert backend.translate(req("anything")).sql == "SELECT 42"


def test_backend_error_carries_status_and_body():
    with serve_mock() as server:
        with HttpBackend(server.url) as backend:
            with pytest.raises(BackendError) as info:
                backend.translate(req("unknown"))
    assert info.value.status == 404 and "unknown question" in info.value.body


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_transport_error_when_server_down():
    with HttpBackend(f"http://127.0.0.1:{_free_port()}", timeout=2) as backend:
        with pytest.raises(TransportError):
            backend.translate(req("q"))


def test_one_retry_on_transport_error(monkeypatch):
    with serve_mock(canned={"q": "SELECT 1"}) as server:
        backend = HttpBackend(server.url)
        real_post = backend._client.post
        calls = []

        def flaky(*args, **kwargs):
            calls.append(1)
            if len(calls) == 1:
                raise httpx.ConnectError("boom")
            return real_post(*args, **kwargs)

        monkeypatch.setattr(backend._client, "post", flaky)
        assert backend.translate(req("q")).sql == "SELECT 1"
        assert len(calls) == 2
        backend.close()


def test_mock_under_concurrent_clients():
    canned = {f"q{i}": f"SELECT {i}" for i in range(64)}
    with serve_mock(canned=canned) as server:
        with HttpBackend(server.url) as backend:
            questions = [f"q{random.Random(i).randrange(64)}" for i in range(160)]
            with ThreadPoolExecutor(max_workers=16) as pool:
                answers = list(pool.map(lambda q: backend.translate(req(q)).sql, questions))
    assert answers == [canned[q] for q in questions]


def test_template_dataset_is_seeded_and_answerable(utility):
    a = template_dataset(utility, 30, seed=1, values={("sites", "city"): ["Vancouver"]})
    b = template_dataset(utility, 30, seed=1, values={("sites", "city"): ["Vancouver"]})
    assert a == b and len(a) == 30
    assert {p.split for p in a} == {Split.TEST}
    for pair in a:
        sql = baseline_translate(pair.question, utility)
        assert repair(sql, utility).repaired_sql == pair.gold_sql


def test_translate_all_keeps_order_and_maps_no_match_to_empty(utility):
    pairs = [
        QueryPair("how many rows are in sites", "SELECT count(*) FROM sites", "utility", Split.TEST),
        QueryPair("gibberish here", "SELECT 1", "utility", Split.TEST),
        QueryPair("list city of sites", "SELECT city FROM sites", "utility", Split.TEST),
    ]
    out = translate_all(pairs, BaselineBackend(utility), {"utility": utility}, parallelism=3)
    assert out == ["SELECT count(*) FROM sites", "", "SELECT city FROM sites"]
