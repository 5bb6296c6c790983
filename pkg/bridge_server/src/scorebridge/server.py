"""Score server over the newline-delimited JSON wire protocol.

Requests, one JSON object per line, UTF-8:

    {"op": "ping"}                                   -> {"ok": true}
    {"op": "hello", "schedule_hash": "<sha256 hex>"} -> {"ok": true} | refusal
    {"op": "score", "t": <int>, "shape": [C, H, W],
     "data": "<base64 little-endian float32>"}       -> {"ok": true, "data": ...}

Failures answer {"ok": false, "error": "..."} and the connection stays open,
except a schedule-hash mismatch, which is refused and then closed. One
request is in flight per connection at a time. Runs over stdio by default or
over TCP with --listen HOST:PORT.
"""

from __future__ import annotations

import argparse
import base64
import json
import socket
import sys
import threading

import numpy as np

from .models import AnalyticGaussian, AnalyticKde, NeuralCheckpoint
from .schedule import ServerSchedule, respaced_schedule


def _error(msg: str) -> dict:
    return {"ok": False, "error": msg}


def handle_request(line: bytes, model, schedule: ServerSchedule):
    """Returns (response dict, keep_connection flag)."""
    try:
        req = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        return _error(f"malformed request: {exc}"), True
    if not isinstance(req, dict) or "op" not in req:
        return _error("request must be an object with an op field"), True
    op = req["op"]
    if op == "ping":
        return {"ok": True}, True
    if op == "hello":
        if req.get("schedule_hash") != schedule.hash():
            return _error("schedule hash mismatch: server schedule differs"), False
        return {"ok": True}, True
    if op == "score":
        try:
            t = int(req["t"])
            shape = tuple(int(v) for v in req["shape"])
            raw = base64.b64decode(req["data"], validate=True)
        except (KeyError, TypeError, ValueError) as exc:
            return _error(f"bad score request: {exc}"), True
        if len(shape) != 3 or any(v < 1 for v in shape):
            return _error(f"invalid shape {list(shape)}: want [C, H, W]"), True
        if len(raw) % 4:
            return _error(f"payload length {len(raw)} is not float32-aligned "
                          f"for shape {list(shape)}"), True
        flat = np.frombuffer(raw, dtype="<f4")
        expected = int(np.prod(shape))
        if flat.size != expected:
            return _error(f"payload shape mismatch: {flat.size} floats for "
                          f"shape {list(shape)} ({expected})"), True
        if not 1 <= t <= schedule.T:
            return _error(f"time index {t} outside [1, {schedule.T}]"), True
        try:
            score = model.score(flat.astype(np.float64).reshape(shape), t)
        except Exception as exc:
            return _error(f"model failure: {exc}"), True
        data = base64.b64encode(
            np.ascontiguousarray(score, dtype="<f4").tobytes()).decode("ascii")
        return {"ok": True, "data": data}, True
    return _error(f"unknown op {op!r}"), True


def _serve_stream(read_line, write_line, model, schedule):
    while True:
        line = read_line()
        if not line:
            return
        if not line.strip():
            continue
        reply, keep = handle_request(line, model, schedule)
        write_line((json.dumps(reply) + "\n").encode("utf-8"))
        if not keep:
            return


def serve_stdio(model, schedule):
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer

    def write(b):
        stdout.write(b)
        stdout.flush()

    _serve_stream(stdin.readline, write, model, schedule)


def serve_tcp(host: str, port: int, model, schedule, ready=None, stop=None):
    srv = socket.create_server((host, port))
    srv.settimeout(0.25)
    if ready is not None:
        ready(srv.getsockname()[1])

    def client_loop(conn):
        with conn, conn.makefile("rb") as reader:
            _serve_stream(reader.readline, conn.sendall, model, schedule)

    try:
        while stop is None or not stop.is_set():
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            threading.Thread(target=client_loop, args=(conn,), daemon=True).start()
    finally:
        srv.close()


def build_model(args, schedule: ServerSchedule):
    if args.model == "gaussian":
        return AnalyticGaussian(schedule, args.mean, args.var)
    if args.model == "kde":
        if not args.points:
            raise SystemExit("kde model requires --points FILE.npz")
        return AnalyticKde(schedule, np.load(args.points)["points"])
    if args.model == "neural":
        if not args.checkpoint:
            raise SystemExit("neural model requires --checkpoint FILE.pt")
        return NeuralCheckpoint(schedule, args.checkpoint)
    raise SystemExit(f"unknown model {args.model!r}")


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="score-bridge-server")
    p.add_argument("--listen", metavar="HOST:PORT",
                   help="serve over TCP instead of stdio")
    p.add_argument("--model", default="gaussian",
                   choices=("gaussian", "kde", "neural"))
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--var", type=float, default=1.0)
    p.add_argument("--points", help="npz file holding a 'points' array")
    p.add_argument("--checkpoint", help="TorchScript denoiser path")
    p.add_argument("--schedule-T", type=int, default=100)
    p.add_argument("--beta-min", type=float, default=1e-4)
    p.add_argument("--beta-max", type=float, default=0.02)
    p.add_argument("--base-steps", type=int, default=1000)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    schedule = respaced_schedule(args.schedule_T, args.beta_min, args.beta_max,
                                 args.base_steps)
    model = build_model(args, schedule)
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        serve_tcp(host or "127.0.0.1", int(port), model, schedule)
    else:
        serve_stdio(model, schedule)
    return 0


if __name__ == "__main__":
    sys.exit(main())
