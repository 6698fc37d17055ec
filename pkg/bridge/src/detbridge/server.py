"""Protocol v1 server loop over stdio or a TCP socket.

One connection is handled at a time and requests are answered strictly in
order.  A session must open with a version-1 hello; a version mismatch is
answered with an error record and the connection is dropped.  After the
handshake, malformed or failing detect requests yield error records (with
the request id when one was readable) and the session stays alive.
"""

from __future__ import annotations

import socket
import sys
from dataclasses import dataclass

import numpy as np

from .protocol import (
    PROTOCOL_VERSION,
    ProtocolError,
    decode_line,
    detections_reply,
    encode,
    error_reply,
    hello_reply,
    parse_detect,
)


@dataclass
class BridgeConfig:
    backend: object
    name: str = "detbridge"
    transport: str = "stdio"  # "stdio" | "tcp"
    host: str = "127.0.0.1"
    port: int = 0


class Session:
    """One client connection: handshake, then serial request handling."""

    def __init__(self, backend, name: str):
        self.backend = backend
        self.name = name
        self.handshaken = False

    def respond(self, line: bytes) -> tuple[dict, bool]:
        """(reply record, keep_going) for one request line."""
        try:
            record = decode_line(line)
        except ProtocolError as exc:
            return error_reply(str(exc)), True

        kind = record["type"]
        if not self.handshaken:
            if kind != "hello":
                return error_reply("expected a hello record first"), False
            if record.get("version") != PROTOCOL_VERSION:
                return (
                    error_reply(
                        f"unsupported protocol version {record.get('version')!r}; "
                        f"this bridge speaks version {PROTOCOL_VERSION}"
                    ),
                    False,
                )
            self.handshaken = True
            return hello_reply(self.name), True

        if kind == "hello":
            return hello_reply(self.name), True
        if kind != "detect":
            return error_reply(f"unknown record type {kind!r}"), True

        request_id = None
        try:
            request_id, height, width, raw = parse_detect(record)
            image = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
            boxes = self.backend.detect(image)
            return detections_reply(request_id, boxes), True
        except ProtocolError as exc:
            return error_reply(str(exc), exc.request_id), True
        except Exception as exc:  # backend failure must not kill the server
            return error_reply(f"backend error: {exc}", request_id), True


def _serve_stream(read_line_iter, write, backend, name: str) -> None:
    session = Session(backend, name)
    for line in read_line_iter:
        if not line.strip():
            continue
        reply, keep_going = session.respond(line)
        write(encode(reply))
        if not keep_going:
            break


def serve_stdio(cfg: BridgeConfig) -> None:
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer

    def write(payload: bytes) -> None:
        stdout.write(payload)
        stdout.flush()

    _serve_stream(iter(stdin.readline, b""), write, cfg.backend, cfg.name)


def serve_tcp(cfg: BridgeConfig) -> None:
    server = socket.create_server((cfg.host, cfg.port))
    host, port = server.getsockname()[:2]
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        while True:
            client, _ = server.accept()
            with client:
                reader = client.makefile("rb")
                write = lambda payload: client.sendall(payload)
                try:
                    _serve_stream(iter(reader.readline, b""), write, cfg.backend, cfg.name)
                except (BrokenPipeError, ConnectionResetError):
                    pass
    finally:
        server.close()


def serve(cfg: BridgeConfig) -> None:
    if cfg.transport == "stdio":
        serve_stdio(cfg)
    elif cfg.transport == "tcp":
        serve_tcp(cfg)
    else:
        raise ValueError(f"unknown transport {cfg.transport!r}")
