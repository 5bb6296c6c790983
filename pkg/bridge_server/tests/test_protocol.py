import base64
import json

import numpy as np
import pytest

from scorebridge import AnalyticGaussian, AnalyticKde, respaced_schedule
from scorebridge.server import handle_request


@pytest.fixture(scope="module")
def served():
    schedule = respaced_schedule(100)
    model = AnalyticGaussian(schedule, mean=0.2, var=1.0)
    return schedule, model


def call(model, schedule, obj):
    line = obj if isinstance(obj, bytes) else (json.dumps(obj) + "\n").encode()
    return handle_request(line, model, schedule)


def encode(x):
    return base64.b64encode(np.ascontiguousarray(x, dtype="<f4").tobytes()).decode()


def test_ping(served):
    schedule, model = served
    reply, keep = call(model, schedule, {"op": "ping"})
    assert reply == {"ok": True} and keep


def test_malformed_line_keeps_connection(served):
    schedule, model = served
    reply, keep = call(model, schedule, b"not json at all\n")
    assert reply["ok"] is False and keep
    reply, keep = call(model, schedule, b"[1, 2, 3]\n")
    assert reply["ok"] is False and keep


def test_hello_handshake(served):
    schedule, model = served
    ok, keep = call(model, schedule, {"op": "hello", "schedule_hash": schedule.hash()})
    assert ok == {"ok": True} and keep
    bad, keep = call(model, schedule, {"op": "hello", "schedule_hash": "feed"})
    assert bad["ok"] is False
    assert "schedule" in bad["error"]
    assert not keep            # refusal closes the connection


def test_score_roundtrip(served):
    schedule, model = served
    x = np.random.default_rng(0).normal(size=(1, 4, 4))
    reply, keep = call(model, schedule, {"op": "score", "t": 30,
                                         "shape": [1, 4, 4], "data": encode(x)})
    assert reply["ok"] and keep
    got = np.frombuffer(base64.b64decode(reply["data"]), dtype="<f4").reshape(1, 4, 4)
    expect = model.score(x.astype(np.float32).astype(np.float64), 30)
    assert np.max(np.abs(got - expect)) < 1e-6


def test_score_shape_mismatch_mentions_shape(served):
    schedule, model = served
    x = np.zeros((1, 4, 4))
    reply, keep = call(model, schedule, {"op": "score", "t": 30,
                                         "shape": [1, 4, 5], "data": encode(x)})
    assert reply["ok"] is False and keep
    assert "shape" in reply["error"]
    reply, _ = call(model, schedule, {"op": "score", "t": 30,
                                      "shape": [4, 4], "data": encode(x)})
    assert reply["ok"] is False and "shape" in reply["error"]


def test_score_time_bounds(served):
    schedule, model = served
    x = np.zeros((1, 2, 2))
    for bad_t in (0, 101):
        reply, keep = call(model, schedule, {"op": "score", "t": bad_t,
                                             "shape": [1, 2, 2], "data": encode(x)})
        assert reply["ok"] is False and keep


def test_unknown_op(served):
    schedule, model = served
    reply, keep = call(model, schedule, {"op": "train"})
    assert reply["ok"] is False and keep


def test_echo_stability(served):
    # identical request, byte-identical response
    schedule, model = served
    req = (json.dumps({"op": "score", "t": 55, "shape": [1, 3, 3],
                       "data": encode(np.linspace(-1, 1, 9).reshape(1, 3, 3))})
           + "\n").encode()
    a, _ = handle_request(req, model, schedule)
    b, _ = handle_request(req, model, schedule)
    assert json.dumps(a) == json.dumps(b)


def test_kde_model_roundtrip():
    schedule = respaced_schedule(100)
    pts = np.random.default_rng(1).uniform(-1, 1, size=(4, 1, 2, 2))
    model = AnalyticKde(schedule, pts)
    x = np.zeros((1, 2, 2))
    reply, _ = call(model, schedule, {"op": "score", "t": 40,
                                      "shape": [1, 2, 2], "data": encode(x)})
    assert reply["ok"]
    got = np.frombuffer(base64.b64decode(reply["data"]), dtype="<f4")
    assert np.all(np.isfinite(got))
