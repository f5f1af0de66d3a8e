"""Newline-delimited JSON oracle server, one connection at a time.

Grammar (one JSON object per line, both directions): the client opens with
{"hello": <version>} and gets {"dim": d, "grid": g-or-null,
"protocol_version": v}; each following {"id": n, "x": [d floats]} gets
exactly one {"id": n, "flagged": bool} or {"id": n, "error": msg}, in
request order. A malformed request earns an id-less {"error": msg} and the
connection closes: past that point request framing can no longer be
trusted. Ids must be unique per connection. Floats travel at full
round-trip precision in both directions.

One model evaluation per accepted query, none for rejected ones. With a
grid declared, a query whose coordinates are not exact grid multiples is
rejected; nothing is ever silently snapped.
"""

from __future__ import annotations

import json
import socket
import threading
from typing import Callable

import numpy as np

from .config import BridgeConfig
from .predicate import load_predicate

PROTOCOL_VERSION = 1


def off_grid(x: np.ndarray, grid: float, tol: float = 1e-9) -> bool:
    scaled = x / grid
    return bool(np.any(np.abs(scaled - np.rint(scaled))
                       > tol * np.maximum(1.0, np.abs(scaled))))


class BridgeServer:
    """Binds immediately; serve_forever() answers connections sequentially."""

    def __init__(self, verdict: Callable[[np.ndarray], bool], dimension: int,
                 grid: float | None = None, host: str = "127.0.0.1",
                 port: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self._verdict = verdict
        self._dimension = dimension
        self._grid = grid
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._active: socket.socket | None = None
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
                self._handle(conn)
        finally:
            self._sock.close()

    def stop(self) -> None:
        """Request shutdown; also unblocks a connection mid-read so the
        serving thread exits promptly instead of waiting on the peer."""
        self._stop.set()
        with self._lock:
            if self._active is not None:
                try:
                    self._active.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    def _handle(self, conn: socket.socket) -> None:
        with self._lock:
            self._active = conn
        file = conn.makefile("rwb")

        def reply(obj: dict) -> None:
            file.write((json.dumps(obj, separators=(",", ":")) + "\n")
                       .encode("ascii"))
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
            reply({"dim": self._dimension, "grid": self._grid,
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
                flagged, error = self._answer(request["x"])
                if error is not None:
                    reply({"id": qid, "error": error})
                else:
                    reply({"id": qid, "flagged": flagged})
        except OSError:
            pass
        finally:
            with self._lock:
                self._active = None
            try:
                file.close()
            finally:
                conn.close()

    def _answer(self, payload) -> tuple[bool | None, str | None]:
        """Validate and evaluate one query: (verdict, None) on success,
        (None, message) on rejection. Rejections cost no model evaluation."""
        try:
            x = np.asarray(payload, dtype=np.float64)
        except (TypeError, ValueError):
            return None, "query 'x' must be an array of numbers"
        if x.shape != (self._dimension,):
            return None, f"expected {self._dimension} coordinates, got shape {x.shape}"
        if not np.all(np.isfinite(x)):
            return None, "query coordinates must be finite"
        if self._grid is not None and off_grid(x, self._grid):
            return None, f"query is off the declared grid of {self._grid}"
        try:
            return bool(self._verdict(x)), None
        except Exception as exc:
            return None, f"model error: {exc}"


def make_server(cfg: BridgeConfig) -> BridgeServer:
    verdict = load_predicate(cfg.model_path, cfg.flagged_classes)
    return BridgeServer(verdict, cfg.dimension, cfg.grid, cfg.host, cfg.port)


def serve(cfg: BridgeConfig) -> None:
    """Load the model, bind, and serve until interrupted."""
    server = make_server(cfg)
    host, port = server.address
    print(f"serving {cfg.model_path} on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
