"""Protocol conformance: the engine's client against this bridge, over both
transports, plus the malformed-payload and version-mismatch contracts.
Prints one PASS/FAIL line per criterion (run with -s to see them live)."""

import base64
import json
import subprocess

import numpy as np
import pytest

from conftest import CANNED_BOXES, bridge_argv
from evomask.core import BoundingBox, make_image
from evomask.detectors import DetectorConnection, TransportError

EXPECTED = [
    BoundingBox(cl=b["cl"], x=b["x"], y=b["y"], l=b["l"], w=b["w"]) for b in CANNED_BOXES
]


def report(criterion, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}: {criterion}"
    if detail:
        line += f" [{detail}]"
    print(line)
    assert ok, line


def test_stdio_round_trip(fixture_path):
    conn = DetectorConnection.open_command(
        bridge_argv("--backend", "echo", "--fixture", str(fixture_path)), timeout=10
    )
    try:
        img = make_image(np.zeros((6, 4, 3), dtype=np.uint8))
        first = conn.detect(img)
        second = conn.detect(img)
        report(
            "engine <-> echo bridge over stdio returns the canned boxes exactly",
            first == EXPECTED and second == EXPECTED and conn.name == "detbridge",
            f"{len(first)} boxes x 2 requests",
        )
    finally:
        conn.close()


def test_tcp_round_trip(fixture_path):
    proc = subprocess.Popen(
        bridge_argv(
            "--transport",
            "tcp",
            "--port",
            "0",
            "--backend",
            "echo",
            "--fixture",
            str(fixture_path),
        ),
        stderr=subprocess.PIPE,
    )
    try:
        announcement = proc.stderr.readline().decode()
        assert announcement.startswith("listening on ")
        host, port = announcement.split()[-1].rsplit(":", 1)
        conn = DetectorConnection.open_tcp(host, int(port), timeout=10)
        try:
            boxes = conn.detect(make_image(np.zeros((3, 3, 3), dtype=np.uint8)))
            report(
                "engine <-> echo bridge over TCP returns the canned boxes exactly",
                boxes == EXPECTED,
                f"{host}:{port}",
            )
        finally:
            conn.close()
    finally:
        proc.kill()
        proc.wait()


class RawStdio:
    """Hand-rolled protocol speaker for the error-path criteria."""

    def __init__(self, argv):
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def send(self, obj):
        self.proc.stdin.write(json.dumps(obj).encode() + b"\n")
        self.proc.stdin.flush()

    def recv(self):
        line = self.proc.stdout.readline()
        assert line, "bridge closed the stream unexpectedly"
        return json.loads(line)

    def close(self):
        self.proc.stdin.close()
        self.proc.stdout.close()
        self.proc.wait(timeout=5)


def test_malformed_payload_keeps_connection(fixture_path):
    raw = RawStdio(bridge_argv("--backend", "echo", "--fixture", str(fixture_path)))
    try:
        raw.send({"type": "hello", "version": 1})
        assert raw.recv()["type"] == "hello"
        good_pixels = base64.b64encode(bytes(2 * 2 * 3)).decode()
        raw.send(
            {
                "type": "detect",
                "id": 11,
                "height": 2,
                "width": 2,
                "pixels": good_pixels[:-4] + "!!",  # corrupt base64
            }
        )
        error = raw.recv()
        raw.send({"type": "detect", "id": 12, "height": 2, "width": 2, "pixels": good_pixels})
        after = raw.recv()
        report(
            "malformed payload yields an error record and the connection survives",
            error["type"] == "error"
            and error["id"] == 11
            and after["type"] == "detections"
            and after["id"] == 12
            and after["boxes"] == CANNED_BOXES,
            f"error message: {error['message'][:60]}",
        )
    finally:
        raw.close()


def test_handshake_version_mismatch_rejected(fixture_path):
    raw = RawStdio(bridge_argv("--backend", "echo", "--fixture", str(fixture_path)))
    try:
        raw.send({"type": "hello", "version": 2})
        reply = raw.recv()
        closed = raw.proc.stdout.readline() == b""  # server drops the session
        report(
            "handshake version mismatch is rejected",
            reply["type"] == "error" and "version" in reply["message"] and closed,
            reply["message"][:60],
        )
    finally:
        raw.proc.kill()
        raw.proc.wait()


def test_bridge_startup_failure_surfaces_as_transport_error():
    # a bridge that dies before the handshake (missing fixture file) must
    # show up engine-side as a transport failure, not a hang
    with pytest.raises(TransportError):
        DetectorConnection.open_command(
            bridge_argv("--backend", "echo", "--fixture", "/missing.json"), timeout=5
        )


def test_replies_arrive_in_request_order(fixture_path):
    raw = RawStdio(bridge_argv("--backend", "echo", "--fixture", str(fixture_path)))
    try:
        raw.send({"type": "hello", "version": 1})
        raw.recv()
        pixels = base64.b64encode(bytes(1 * 1 * 3)).decode()
        for request_id in (3, 4, 5):
            raw.send(
                {"type": "detect", "id": request_id, "height": 1, "width": 1, "pixels": pixels}
            )
        ids = [raw.recv()["id"] for _ in range(3)]
        assert ids == [3, 4, 5]
    finally:
        raw.close()


def test_full_attack_run_against_bridge_detector(tmp_path, fixture_path):
    """The engine's whole attack loop speaking to this bridge end to end."""
    import json as json_mod

    from evomask.formats import write_png
    from evomask.harness import butterfly_scene, load_config, run_attack

    write_png(tmp_path / "scene.png", butterfly_scene())
    doc = {
        "images": ["scene.png"],
        "detectors": [
            {
                "kind": "command",
                "argv": bridge_argv("--backend", "echo", "--fixture", str(fixture_path)),
                "timeout": 15,
            }
        ],
        "region": "right-half",
        "ga": {"iterations": 2, "population_size": 6, "rng_seed": 4},
        "dist": {"epsilon": 5.0},
        "out_dir": str(tmp_path / "out"),
        "workers": 4,  # must be clamped to 1 for a serialize-only detector
    }
    cfg_path = tmp_path / "attack.json"
    cfg_path.write_text(json_mod.dumps(doc))
    archive, out_dir = run_attack(load_config(cfg_path))
    assert (out_dir / "pareto.csv").exists()
    assert len(archive.fronts) == 3
    run_info = json_mod.loads((out_dir / "run.json").read_text())
    report(
        "engine attack loop runs end to end against the bridge",
        run_info["workers"] == 1 and len(archive.fronts) == 3,
        f"{sum(len(f.members) for f in archive.fronts)} archived individuals",
    )
