"""Detector oracles: the deterministic synthetic detector and a client for
external detectors speaking the v1 wire protocol.

A detector is any object with a ``detect(img) -> list[BoundingBox]`` method
and a ``concurrency`` attribute of either ``"safe"`` (unrestricted parallel
calls) or ``"serialize"`` (one call at a time).  Detectors must be
deterministic for the lifetime of a run: equal images, equal predictions.

The synthetic detector thresholds pixels against ``theta`` shifted by a
global-mean coupling term ``alpha * (mean - m0)``.  Brightening pixels
anywhere in the image raises the effective threshold everywhere, so a
perturbation confined to one region can flip near-threshold detections in
a distant, untouched region.  That non-local channel is what makes the
synthetic detector attackable in the same qualitative way as a real
network, while staying a pure function.

Wire protocol v1 (newline-delimited UTF-8 JSON records over a child
process's stdio or a TCP socket; one record per line, no raw newlines
inside a record; unknown fields ignored):

* handshake: client sends ``{"type":"hello","version":1}``; the server
  replies ``{"type":"hello","version":1,"name":<string>}``.
* request: ``{"type":"detect","id":<uint64>,"height":L,"width":W,
  "pixels":<base64 of row-major R,G,B bytes>}``.
* response: ``{"type":"detections","id":<same uint64>,"boxes":[{"cl":<int,
  0 = no-object>,"x":<float>,"y":<float>,"l":<float>,"w":<float>}]}``.
* error: ``{"type":"error","id":<uint64 or null>,"message":<string>}``.
"""

from __future__ import annotations

import base64
import json
import os
import select
import socket
import subprocess
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BoundingBox

CONCURRENCY_SAFE = "safe"
CONCURRENCY_SERIALIZE = "serialize"

PROTOCOL_VERSION = 1


class DetectorError(Exception):
    """Base class for detector failures; aborts a search run cleanly."""


class TransportError(DetectorError):
    """The connection to an external detector broke."""


class MalformedResponseError(DetectorError):
    """The external detector sent a record the client cannot decode."""


class ResponseIdMismatchError(DetectorError):
    """A detections record arrived with an id we never sent."""


class DetectorTimeoutError(DetectorError):
    """The external detector did not answer within the timeout."""


class HandshakeError(DetectorError):
    """Version negotiation with the external detector failed."""


class RemoteDetectorError(DetectorError):
    """The external detector reported an error record."""


# ---------------------------------------------------------------------------
# Synthetic detector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticDetectorConfig:
    theta: float = 200.0  # base channel threshold
    alpha: float = 1.5  # global-coupling gain
    m0: float = 96.0  # reference global mean
    min_area: int = 9  # minimum component pixel count

    def __post_init__(self):
        if not 0 <= self.theta <= 255:
            raise ValueError(f"theta must lie in [0, 255], got {self.theta}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.min_area < 1:
            raise ValueError(f"min_area must be >= 1, got {self.min_area}")


def synthetic_detect(img: np.ndarray, cfg: SyntheticDetectorConfig) -> list[BoundingBox]:
    """Threshold-and-label detector with a global-mean coupled threshold.

    A pixel qualifies when its peak channel value reaches the effective
    threshold ``clamp(theta + alpha * (mean - m0), 0, 255)``; its class is
    the argmax channel index plus one (ties to the lowest channel).
    Qualifying pixels of equal class are grouped into 4-connected
    components, and every component of at least ``min_area`` pixels yields
    one box spanning its index extents.  Boxes are ordered by (class, x, y).
    """
    img = np.asarray(img)
    mean = float(img.mean(dtype=np.float64))
    threshold = min(255.0, max(0.0, cfg.theta + cfg.alpha * (mean - cfg.m0)))
    peak = img.max(axis=2)
    qualifies = peak >= threshold
    channel = img.argmax(axis=2)
    boxes = []
    for idx in range(3):
        labels, count = ndimage.label(qualifies & (channel == idx))
        if count == 0:
            continue
        for comp, slices in enumerate(ndimage.find_objects(labels), start=1):
            if slices is None:
                continue
            area = int((labels[slices] == comp).sum())
            if area < cfg.min_area:
                continue
            i0, i1 = slices[0].start, slices[0].stop - 1
            j0, j1 = slices[1].start, slices[1].stop - 1
            boxes.append(
                BoundingBox(
                    cl=idx + 1,
                    x=(i0 + i1) / 2,
                    y=(j0 + j1) / 2,
                    l=float(i1 - i0 + 1),
                    w=float(j1 - j0 + 1),
                )
            )
    boxes.sort(key=lambda b: (b.cl, b.x, b.y))
    return boxes


class SyntheticDetector:
    """Detector wrapper around :func:`synthetic_detect`."""

    concurrency = CONCURRENCY_SAFE

    def __init__(self, cfg: SyntheticDetectorConfig | None = None):
        self.cfg = cfg or SyntheticDetectorConfig()

    def detect(self, img: np.ndarray) -> list[BoundingBox]:
        return synthetic_detect(img, self.cfg)


# ---------------------------------------------------------------------------
# Wire protocol client
# ---------------------------------------------------------------------------


class _PipeChannel:
    """Line transport over a child process's stdin/stdout pair."""

    def __init__(self, proc: subprocess.Popen):
        self._proc = proc
        self._buf = b""

    def send_line(self, payload: bytes) -> None:
        try:
            self._proc.stdin.write(payload + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise TransportError(f"writing to detector process failed: {exc}") from exc

    def recv_line(self, timeout: float) -> bytes:
        fd = self._proc.stdout.fileno()
        deadline = time.monotonic() + timeout
        while True:
            newline = self._buf.find(b"\n")
            if newline >= 0:
                line, self._buf = self._buf[:newline], self._buf[newline + 1 :]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DetectorTimeoutError(f"no response within {timeout} s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise DetectorTimeoutError(f"no response within {timeout} s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise TransportError("detector process closed its stdout")
            self._buf += chunk

    def close(self) -> None:
        proc = self._proc
        for stream in (proc.stdin, proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()


class _SocketChannel:
    """Line transport over a TCP socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = b""

    def send_line(self, payload: bytes) -> None:
        try:
            self._sock.sendall(payload + b"\n")
        except OSError as exc:
            raise TransportError(f"writing to detector socket failed: {exc}") from exc

    def recv_line(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        while True:
            newline = self._buf.find(b"\n")
            if newline >= 0:
                line, self._buf = self._buf[:newline], self._buf[newline + 1 :]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DetectorTimeoutError(f"no response within {timeout} s")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout as exc:
                raise DetectorTimeoutError(f"no response within {timeout} s") from exc
            except OSError as exc:
                raise TransportError(f"reading from detector socket failed: {exc}") from exc
            if not chunk:
                raise TransportError("detector closed the connection")
            self._buf += chunk

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class DetectorConnection:
    """One handshaken connection to an external detector.

    Requests are strictly serialized: one in-flight request per connection
    (the id field would allow pipelining, but v1 clients do not use it).
    """

    def __init__(self, channel, timeout: float = 30.0, name: str | None = None):
        self._channel = channel
        self.timeout = timeout
        self.name = name
        self._next_id = 0

    @classmethod
    def open_command(cls, argv, timeout: float = 30.0) -> "DetectorConnection":
        """Spawn ``argv`` as a child process and handshake over its stdio."""
        try:
            proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise TransportError(f"could not spawn detector command {argv!r}: {exc}") from exc
        conn = cls(_PipeChannel(proc), timeout=timeout)
        conn._handshake()
        return conn

    @classmethod
    def open_tcp(cls, host: str, port: int, timeout: float = 30.0) -> "DetectorConnection":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"could not connect to {host}:{port}: {exc}") from exc
        conn = cls(_SocketChannel(sock), timeout=timeout)
        conn._handshake()
        return conn

    def _send(self, record: dict) -> None:
        self._channel.send_line(json.dumps(record, separators=(",", ":")).encode("utf-8"))

    def _recv(self) -> dict:
        line = self._channel.recv_line(self.timeout)
        try:
            record = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedResponseError(f"undecodable record: {line[:200]!r}") from exc
        if not isinstance(record, dict) or "type" not in record:
            raise MalformedResponseError(f"record is not an object with a type: {line[:200]!r}")
        return record

    def _handshake(self) -> None:
        self._send({"type": "hello", "version": PROTOCOL_VERSION})
        reply = self._recv()
        if reply.get("type") == "error":
            raise HandshakeError(f"detector rejected handshake: {reply.get('message')}")
        if reply.get("type") != "hello" or reply.get("version") != PROTOCOL_VERSION:
            raise HandshakeError(f"unexpected handshake reply: {reply!r}")
        self.name = reply.get("name")

    def detect(self, img: np.ndarray) -> list[BoundingBox]:
        img = np.ascontiguousarray(img, dtype=np.uint8)
        height, width = img.shape[:2]
        request_id = self._next_id
        self._next_id += 1
        self._send(
            {
                "type": "detect",
                "id": request_id,
                "height": height,
                "width": width,
                "pixels": base64.b64encode(img.tobytes()).decode("ascii"),
            }
        )
        reply = self._recv()
        kind = reply.get("type")
        if kind == "error":
            raise RemoteDetectorError(f"detector error: {reply.get('message')}")
        if kind != "detections":
            raise MalformedResponseError(f"expected detections, got {kind!r}")
        if reply.get("id") != request_id:
            raise ResponseIdMismatchError(
                f"sent id {request_id}, got {reply.get('id')!r}"
            )
        raw_boxes = reply.get("boxes")
        if not isinstance(raw_boxes, list):
            raise MalformedResponseError("detections record carries no box list")
        boxes = []
        for raw in raw_boxes:
            try:
                boxes.append(
                    BoundingBox(
                        cl=int(raw["cl"]),
                        x=float(raw["x"]),
                        y=float(raw["y"]),
                        l=float(raw["l"]),
                        w=float(raw["w"]),
                    )
                )
            except (TypeError, KeyError, ValueError) as exc:
                raise MalformedResponseError(f"undecodable box {raw!r}") from exc
        return boxes

    def close(self) -> None:
        self._channel.close()


def external_detect(img: np.ndarray, conn: DetectorConnection) -> list[BoundingBox]:
    """One request/response round trip against a handshaken connection."""
    return conn.detect(img)


class ExternalDetector:
    """Detector wrapper around a protocol connection."""

    concurrency = CONCURRENCY_SERIALIZE

    def __init__(self, conn: DetectorConnection):
        self.conn = conn

    def detect(self, img: np.ndarray) -> list[BoundingBox]:
        return self.conn.detect(img)

    def close(self) -> None:
        self.conn.close()
