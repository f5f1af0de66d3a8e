import contextlib
import json
import socket
import threading

import pytest

from oracle_bridge import PROTOCOL_VERSION, BridgeServer


@contextlib.contextmanager
def running(server: BridgeServer):
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.stop()
        thread.join(timeout=5)


class WireClient:
    """Raw line-protocol client for exercising the server byte by byte."""

    def __init__(self, address: tuple[str, int]):
        self.sock = socket.create_connection(address, timeout=10)
        self.file = self.sock.makefile("rwb")

    def send(self, obj: dict) -> None:
        self.file.write((json.dumps(obj) + "\n").encode("ascii"))
        self.file.flush()

    def send_raw(self, line: bytes) -> None:
        self.file.write(line)
        self.file.flush()

    def recv(self) -> dict:
        raw = self.file.readline()
        assert raw, "server closed the connection"
        return json.loads(raw)

    def handshake(self, version: int = PROTOCOL_VERSION) -> dict:
        self.send({"hello": version})
        return self.recv()

    def close(self) -> None:
        try:
            self.file.close()
        finally:
            self.sock.close()


@pytest.fixture()
def client_for():
    clients = []

    def connect(server: BridgeServer) -> WireClient:
        c = WireClient(server.address)
        clients.append(c)
        return c

    yield connect
    for c in clients:
        c.close()


def write_module(tmp_path, name: str, body: str) -> str:
    path = tmp_path / f"{name}.py"
    path.write_text(body)
    return str(path)
