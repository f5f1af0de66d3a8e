"""Newline-delimited JSON query protocol over TCP.

One JSON object per line. The client opens with {"hello": <version>} and the
server answers {"dim": d, "grid": g-or-null, "protocol_version": v}. After
that, each request {"id": n, "x": [d floats]} gets exactly one reply
{"id": n, "flagged": bool} or {"id": n, "error": msg}. Requests are strictly
sequential per connection; ids must be unique within a connection and every
reply echoes the request id. Floats travel at full round-trip precision
(shortest-repr JSON encoding both ways).
"""

from __future__ import annotations

import json
import socket
import threading

import numpy as np

from .oracles import DecisionOracle, OracleDescriptor, OracleError
from .vectors import Array

PROTOCOL_VERSION = 1


class WireError(OracleError):
    pass


class VersionMismatchError(WireError):
    pass


class ProtocolError(WireError):
    """Malformed or error reply; carries the offending payload."""

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


def _parse_endpoint(endpoint: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(endpoint, tuple):
        return endpoint[0], int(endpoint[1])
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class RemoteOracle(DecisionOracle):
    """Client side: a decision oracle living behind a socket."""

    def __init__(self, sock: socket.socket, descriptor: OracleDescriptor):
        self._sock = sock
        self._file = sock.makefile("rwb")
        self._next_id = 0
        self.descriptor = descriptor

    def _roundtrip(self, request: dict) -> dict:
        line = json.dumps(request, separators=(",", ":")) + "\n"
        try:
            self._file.write(line.encode("ascii"))
            self._file.flush()
            raw = self._file.readline()
        except OSError as exc:
            raise WireError(f"connection failed mid-query: {exc}") from exc
        if not raw:
            raise WireError("server closed the connection")
        try:
            reply = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable reply: {raw[:200]!r}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError("reply is not a JSON object", reply)
        return reply

    def _decide(self, x: Array) -> bool:
        qid = self._next_id
        self._next_id += 1
        reply = self._roundtrip({"id": qid, "x": [float(v) for v in x]})
        if "error" in reply:
            raise ProtocolError(f"server rejected query: {reply['error']}", reply)
        if reply.get("id") != qid:
            raise ProtocolError(
                f"reply id {reply.get('id')!r} does not echo request id {qid}", reply)
        if not isinstance(reply.get("flagged"), bool):
            raise ProtocolError("reply lacks a boolean 'flagged' field", reply)
        return reply["flagged"]

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "RemoteOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect_remote(endpoint: str | tuple[str, int],
                   timeout: float = 30.0) -> tuple[RemoteOracle, OracleDescriptor]:
    """Dial, handshake, and return the remote oracle with its descriptor."""
    host, port = _parse_endpoint(endpoint)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise WireError(f"cannot connect to {host}:{port}: {exc}") from exc
    file = sock.makefile("rwb")
    try:
        file.write((json.dumps({"hello": PROTOCOL_VERSION}) + "\n").encode("ascii"))
        file.flush()
        raw = file.readline()
    except OSError as exc:
        sock.close()
        raise WireError(f"handshake failed: {exc}") from exc
    if not raw:
        sock.close()
        raise WireError("server closed during handshake")
    try:
        hello = json.loads(raw)
    except json.JSONDecodeError as exc:
        sock.close()
        raise ProtocolError(f"unparseable handshake reply: {raw[:200]!r}") from exc
    if "error" in hello:
        sock.close()
        raise VersionMismatchError(str(hello["error"]))
    version = hello.get("protocol_version")
    if version != PROTOCOL_VERSION:
        sock.close()
        raise VersionMismatchError(
            f"server speaks protocol {version!r}, client speaks {PROTOCOL_VERSION}")
    try:
        descriptor = OracleDescriptor(int(hello["dim"]), hello.get("grid"))
    except (KeyError, TypeError, ValueError) as exc:
        sock.close()
        raise ProtocolError(f"bad handshake fields: {hello!r}") from exc
    file.close()
    oracle = RemoteOracle(sock, descriptor)
    return oracle, descriptor


def _handle_connection(conn: socket.socket, oracle: DecisionOracle) -> None:
    file = conn.makefile("rwb")

    def reply(obj: dict) -> None:
        file.write((json.dumps(obj, separators=(",", ":")) + "\n").encode("ascii"))
        file.flush()

    try:
        raw = file.readline()
        if not raw:
            return
        try:
            hello = json.loads(raw)
            version = hello["hello"]
        except (json.JSONDecodeError, KeyError, TypeError):
            reply({"error": "handshake must be {\"hello\": <version>}"})
            return
        if version != PROTOCOL_VERSION:
            reply({"error": f"unsupported protocol version {version!r}"})
            return
        d = oracle.descriptor
        reply({"dim": d.dimension, "grid": d.grid,
               "protocol_version": PROTOCOL_VERSION})
        seen_ids: set = set()
        for raw in file:
            try:
                request = json.loads(raw)
            except json.JSONDecodeError:
                reply({"error": "malformed request (not JSON)"})
                return
            qid = request.get("id") if isinstance(request, dict) else None
            if qid is None or "x" not in request:
                reply({"error": "request must carry 'id' and 'x'"})
                return
            if qid in seen_ids:
                reply({"id": qid, "error": "duplicate query id"})
                continue
            seen_ids.add(qid)
            try:
                x = np.asarray(request["x"], dtype=np.float64)
                flagged = oracle.decide(x)
            except (OracleError, ValueError, TypeError) as exc:
                reply({"id": qid, "error": str(exc)})
                continue
            reply({"id": qid, "flagged": bool(flagged)})
    except OSError:
        pass
    finally:
        try:
            file.close()
        finally:
            conn.close()


class OracleServer:
    """Serves one oracle over TCP, one connection at a time."""

    def __init__(self, oracle: DecisionOracle, host: str = "127.0.0.1", port: int = 0):
        self._oracle = oracle
        self._stop = threading.Event()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self._sock.settimeout(0.2)
        self.address: tuple[str, int] = self._sock.getsockname()[:2]

    def serve_forever(self) -> None:
        try:
            while not self._stop.is_set():
                try:
                    conn, _ = self._sock.accept()
                except socket.timeout:
                    continue
                _handle_connection(conn, self._oracle)
        finally:
            self._sock.close()

    def stop(self) -> None:
        self._stop.set()


def serve_in_thread(oracle: DecisionOracle,
                    host: str = "127.0.0.1") -> tuple[OracleServer, threading.Thread]:
    """Start a server on an ephemeral port; caller stops it via server.stop()."""
    server = OracleServer(oracle, host=host, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
