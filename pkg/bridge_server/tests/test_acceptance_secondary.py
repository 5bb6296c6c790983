"""Secondary acceptance: wire parity with the client-local analytic score.

The server is spawned as a real child process (and a real TCP listener); the
client side is the primary package's bridge client, so this exercises the
protocol end to end across both implementations.
"""

import json
import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from momentdiff import (
    BridgeProtocolError,
    BridgeScore,
    GaussianDomain,
    GaussianScore,
    build_respaced_schedule,
    default_schedule,
)

from scorebridge import AnalyticGaussian, respaced_schedule, serve_tcp

SERVER_CMD = (f"{sys.executable} -m scorebridge --model gaussian "
              "--mean 0.2 --var 1.0 --schedule-T 100")


@pytest.fixture()
def tcp_server():
    schedule = respaced_schedule(100)
    model = AnalyticGaussian(schedule, mean=0.2, var=1.0)
    stop = threading.Event()
    got_port = {}
    done = threading.Event()

    def ready(port):
        got_port["port"] = port
        done.set()

    thread = threading.Thread(
        target=serve_tcp, args=("127.0.0.1", 0, model, schedule),
        kwargs={"ready": ready, "stop": stop}, daemon=True)
    thread.start()
    assert done.wait(5)
    yield f"tcp:127.0.0.1:{got_port['port']}"
    stop.set()
    thread.join(timeout=5)


def test_parity_with_local_analytic_score_stdio():
    start = time.perf_counter()
    schedule = default_schedule()
    shape = (1, 4, 4)
    local = GaussianScore(
        GaussianDomain(np.full(shape, 0.2), np.full(shape, 1.0)), schedule)
    rng = np.random.default_rng(12)
    with BridgeScore("cmd:" + SERVER_CMD, schedule=schedule) as bridge:
        for _ in range(100):
            t = int(rng.integers(1, 101))
            x = rng.normal(size=shape)
            remote = bridge.score(x, t)
            assert np.max(np.abs(remote - local.score(x, t))) <= 1e-6
    elapsed = time.perf_counter() - start
    print(f"ACCEPTANCE 12 bridge parity over stdio: PASS ({elapsed:.1f}s < 30s)")
    assert elapsed < 30


def test_parity_over_tcp(tcp_server):
    schedule = default_schedule()
    shape = (2, 3, 3)
    local = GaussianScore(
        GaussianDomain(np.full(shape, 0.2), np.full(shape, 1.0)), schedule)
    rng = np.random.default_rng(13)
    with BridgeScore(tcp_server, schedule=schedule) as bridge:
        for t in (1, 37, 100):
            x = rng.normal(size=shape)
            assert np.max(np.abs(bridge.score(x, t) - local.score(x, t))) <= 1e-6


def test_schedule_hash_mismatch_is_refused(tcp_server):
    other = build_respaced_schedule(50)      # different T, different hash
    with pytest.raises(BridgeProtocolError, match="schedule"):
        BridgeScore(tcp_server, schedule=other)


def test_malformed_request_keeps_connection(tcp_server):
    host, port = tcp_server[4:].rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=10) as sock:
        reader = sock.makefile("rb")
        sock.sendall(b"definitely{not json\n")
        reply = json.loads(reader.readline())
        assert reply["ok"] is False
        sock.sendall(b'{"op": "ping"}\n')
        assert json.loads(reader.readline()) == {"ok": True}


def test_wrong_shape_request_names_shape(tcp_server):
    host, port = tcp_server[4:].rsplit(":", 1)
    with socket.create_connection((host, int(port)), timeout=10) as sock:
        reader = sock.makefile("rb")
        sock.sendall(json.dumps({"op": "score", "t": 5, "shape": [1, 2, 2],
                                 "data": "AAAA"}).encode() + b"\n")
        reply = json.loads(reader.readline())
        assert reply["ok"] is False
        assert "shape" in reply["error"]


def test_child_process_refuses_mismatched_schedule():
    mismatched = build_respaced_schedule(100, beta_min=2e-4)
    with pytest.raises(BridgeProtocolError, match="schedule"):
        BridgeScore("cmd:" + SERVER_CMD, schedule=mismatched)


def test_stdio_server_survives_garbage_then_answers():
    proc = subprocess.Popen(SERVER_CMD.split(), stdin=subprocess.PIPE,
                            stdout=subprocess.PIPE)
    try:
        proc.stdin.write(b"garbage line\n")
        proc.stdin.flush()
        assert json.loads(proc.stdout.readline())["ok"] is False
        proc.stdin.write(b'{"op": "ping"}\n')
        proc.stdin.flush()
        assert json.loads(proc.stdout.readline()) == {"ok": True}
    finally:
        proc.terminate()
        proc.wait(timeout=5)
