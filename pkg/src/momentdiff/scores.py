"""Score models: exact analytic scores for testing and a wire-protocol client.

Wire protocol (authoritative definition, shared with the bridge server):
newline-delimited JSON over a byte stream, either the stdio of a child
process or a TCP connection. One JSON object per line, UTF-8, no trailing
data. Payloads are little-endian float32 in C order for the (C, H, W) shape,
base64-encoded.

    {"op": "ping"}                                   -> {"ok": true}
    {"op": "hello", "schedule_hash": "<sha256 hex>"} -> {"ok": true} | refusal
    {"op": "score", "t": <int>, "shape": [C, H, W],
     "data": "<base64 float32>"}                     -> {"ok": true, "data": "..."}

Any failure is {"ok": false, "error": "<message>"}. A schedule-hash refusal
is followed by the server closing the connection.
"""

from __future__ import annotations

import base64
import hashlib
import json
import shlex
import socket
import subprocess
from typing import Protocol

import numpy as np

from .schedule import Schedule

Array = np.ndarray


class ScoreModel(Protocol):
    def score(self, x: Array, t: int) -> Array: ...


class BridgeError(Exception):
    """Base class for score-bridge failures."""


class BridgeConnectionError(BridgeError):
    """Endpoint unreachable, process died, or stream closed."""


class BridgeProtocolError(BridgeError):
    """Malformed response, refused request, or out-of-protocol data."""


class BridgeShapeError(BridgeError):
    """Response payload does not decode to the requested shape."""


class GaussianDomain:
    """Diagonal Gaussian stand-in for a target domain: N(mean, diag(var))."""

    def __init__(self, mean: Array, var: Array):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        if np.any(self.var <= 0.0):
            raise ValueError("domain variance must be positive everywhere")


class GaussianScore:
    """Exact score of the VP-perturbed Gaussian domain.

    q_t = N(alpha_hat(t) * mean, alpha_bar(t) * var + 1 - alpha_bar(t)), so the
    score is -(x - alpha_hat(t) * mean) / (marginal variance), elementwise.
    """

    def __init__(self, domain: GaussianDomain, schedule: Schedule):
        self.domain = domain
        self.schedule = schedule

    def _marginal(self, t: int):
        ab = self.schedule.alpha_bar(t)
        mean = np.sqrt(ab) * self.domain.mean
        var = ab * self.domain.var + (1.0 - ab)
        return mean, var

    def score(self, x: Array, t: int) -> Array:
        x = np.asarray(x, dtype=np.float64)
        mean, var = self._marginal(t)
        return -(x - mean) / var

    def log_density(self, x: Array, t: int) -> float:
        x = np.asarray(x, dtype=np.float64)
        mean, var = self._marginal(t)
        var = np.broadcast_to(var, x.shape)
        return float(-0.5 * np.sum((x - mean) ** 2 / var + np.log(2.0 * np.pi * var)))


class KdeScore:
    """Exact score of the perturbed empirical distribution of a point set.

    q_t is the equal-weight mixture of N(alpha_hat(t) * y_k, (1 - alpha_bar(t)) I);
    responsibilities are computed with log-sum-exp so tiny noise levels do not
    underflow.
    """

    def __init__(self, points, schedule: Schedule):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim < 2 or pts.shape[0] < 1:
            raise ValueError("need at least one point, shaped (K, ...)")
        self.points = pts
        self.schedule = schedule

    def _log_weights(self, x: Array, t: int):
        a = self.schedule.alpha_hat(t)
        var = 1.0 - self.schedule.alpha_bar(t)
        if var <= 0.0:
            raise ValueError("kde score undefined at t = 0 (zero noise variance)")
        diffs = x[None, ...] - a * self.points
        sq = (diffs.reshape(len(self.points), -1) ** 2).sum(axis=1)
        logits = -sq / (2.0 * var)
        shift = logits.max()
        logz = shift + np.log(np.sum(np.exp(logits - shift)))
        return diffs, var, logits, logz

    def score(self, x: Array, t: int) -> Array:
        x = np.asarray(x, dtype=np.float64)
        diffs, var, logits, logz = self._log_weights(x, t)
        w = np.exp(logits - logz)
        return np.tensordot(w, -diffs / var, axes=(0, 0))

    def log_density(self, x: Array, t: int) -> float:
        x = np.asarray(x, dtype=np.float64)
        _, var, _, logz = self._log_weights(x, t)
        dim = x.size
        return float(logz - np.log(len(self.points)) - 0.5 * dim * np.log(2.0 * np.pi * var))


def schedule_hash(s: Schedule) -> str:
    """Hash pinning T and the alpha_bar sequence for the bridge handshake."""
    h = hashlib.sha256()
    h.update(str(s.T).encode())
    h.update(b":")
    h.update(np.ascontiguousarray(s.alpha_bars, dtype="<f8").tobytes())
    return h.hexdigest()


def encode_payload(x: Array) -> str:
    return base64.b64encode(np.ascontiguousarray(x, dtype="<f4").tobytes()).decode("ascii")


def decode_payload(data: str, shape) -> Array:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise BridgeProtocolError(f"payload is not valid base64: {exc}") from exc
    arr = np.frombuffer(raw, dtype="<f4")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise BridgeShapeError(f"payload has {arr.size} floats, expected {expected}")
    return arr.astype(np.float64).reshape(shape)


class _StdioTransport:
    def __init__(self, command: str):
        try:
            self.proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise BridgeConnectionError(f"cannot start bridge process: {exc}") from exc

    def round_trip(self, line: bytes) -> bytes:
        if self.proc.poll() is not None:
            raise BridgeConnectionError("bridge process has exited")
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
            reply = self.proc.stdout.readline()
        except (OSError, ValueError) as exc:
            raise BridgeConnectionError(f"bridge stream broken: {exc}") from exc
        return reply

    def close(self):
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BridgeConnectionError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.reader = self.sock.makefile("rb")

    def round_trip(self, line: bytes) -> bytes:
        try:
            self.sock.sendall(line)
            return self.reader.readline()
        except OSError as exc:
            raise BridgeConnectionError(f"bridge socket broken: {exc}") from exc

    def close(self):
        try:
            self.reader.close()
            self.sock.close()
        except OSError:
            pass


class BridgeScore:
    """Client for a remote score served over the wire protocol.

    endpoint is "tcp:HOST:PORT" or "cmd:<command line>" (child process over
    stdio). The connection is strictly request/response; one chain should own
    one client. When a schedule is given, a hello handshake pins its hash and
    a mismatching server refuses the connection.
    """

    def __init__(self, endpoint: str, schedule: Schedule | None = None,
                 timeout: float = 30.0):
        self.endpoint = endpoint
        if endpoint.startswith("tcp:"):
            host, _, port = endpoint[4:].rpartition(":")
            if not host or not port.isdigit():
                raise ValueError(f"bad tcp endpoint {endpoint!r}, want tcp:HOST:PORT")
            self._transport = _TcpTransport(host, int(port), timeout)
        elif endpoint.startswith("cmd:"):
            self._transport = _StdioTransport(endpoint[4:])
        else:
            raise ValueError(f"unknown endpoint kind {endpoint!r}, want tcp:... or cmd:...")
        self.ping()
        if schedule is not None:
            self._request({"op": "hello", "schedule_hash": schedule_hash(schedule)})

    def _request(self, obj: dict) -> dict:
        line = json.dumps(obj).encode("utf-8") + b"\n"
        reply = self._transport.round_trip(line)
        if not reply:
            raise BridgeConnectionError("connection closed by server")
        try:
            decoded = json.loads(reply.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BridgeProtocolError(f"malformed response line: {exc}") from exc
        if not isinstance(decoded, dict) or "ok" not in decoded:
            raise BridgeProtocolError(f"response missing ok field: {decoded!r}")
        if not decoded["ok"]:
            raise BridgeProtocolError(f"server refused: {decoded.get('error', '?')}")
        return decoded

    def ping(self):
        self._request({"op": "ping"})

    def score(self, x: Array, t: int) -> Array:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError("bridge score expects a (C, H, W) tensor")
        reply = self._request({
            "op": "score",
            "t": int(t),
            "shape": list(x.shape),
            "data": encode_payload(x),
        })
        if "data" not in reply:
            raise BridgeProtocolError("score response carries no data")
        return decode_payload(reply["data"], x.shape)

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
