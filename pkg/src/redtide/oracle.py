"""Uniform closed-box detector interface.

Attack code talks to every detector through the same handle: an
in-process toy detector or an external process speaking a line-delimited
JSON protocol over its standard streams. The handle applies the
deployment confidence threshold and counts queries.

Wire protocol (UTF-8, one compact JSON object per line):

    client -> {"hello":1}
    server -> {"hello":1,"classes":["vessel","buoy"]}
    client -> {"id":0,"image":"<base64 PPM P6>","threshold":0.3}
    server -> {"id":0,"detections":[{"class_id":0,"box":[x,y,w,h],"confidence":0.9}]}

Unknown fields are ignored in both directions. Servers report problems as
``{"id":<id or -1>,"error":"..."}`` and keep the session alive.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import threading

from .errors import (
    OracleProtocolError,
    OracleSpawnError,
    OracleTimeoutError,
)
from .imagery import Image, decode_ppm, encode_ppm
from .toydet import Detection, DetectionSet, ToyDetectorModel, forward

PROTOCOL_VERSION = 1
DEFAULT_THRESHOLD = 0.3
DEFAULT_TIMEOUT = 10.0


def encode_request(request_id: int, image: Image, threshold: float) -> str:
    payload = base64.b64encode(encode_ppm(image)).decode("ascii")
    return json.dumps(
        {"id": request_id, "image": payload, "threshold": threshold},
        separators=(",", ":"),
    )


def decode_request(line: str) -> tuple[int, Image, float]:
    obj = json.loads(line)
    image = decode_ppm(base64.b64decode(obj["image"]))
    return int(obj["id"]), image, float(obj["threshold"])


def encode_response(request_id: int, detections: DetectionSet) -> str:
    dets = [
        {
            "class_id": d.class_id,
            "box": [round(v, 4) for v in d.box],
            "confidence": round(d.confidence, 4),
        }
        for d in detections
    ]
    return json.dumps({"id": request_id, "detections": dets}, separators=(",", ":"))


def parse_response_detections(obj: dict) -> DetectionSet:
    detections = []
    for i, d in enumerate(obj.get("detections", [])):
        try:
            box = tuple(float(v) for v in d["box"])
            if len(box) != 4:
                raise ValueError("box must have 4 entries")
            detections.append(
                Detection(
                    class_id=int(d["class_id"]),
                    box=box,
                    confidence=float(d["confidence"]),
                    cell=int(d.get("cell", -1)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise OracleProtocolError(f"malformed detection #{i}: {exc}") from exc
    return DetectionSet(tuple(detections))


class ToyOracle:
    """In-process oracle over a toy detector model."""

    kind = "toy"

    def __init__(self, model: ToyDetectorModel, threshold: float = DEFAULT_THRESHOLD):
        if not (0.0 <= threshold <= 1.0):
            raise OracleProtocolError(f"threshold must be in [0, 1], got {threshold}")
        self.model = model
        self.threshold = threshold
        self.query_count = 0

    @property
    def classes(self) -> tuple[str, ...]:
        return self.model.class_names

    def detect(self, image: Image) -> DetectionSet:
        self.query_count += 1
        return forward(self.model, image, threshold=self.threshold)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ExternalOracle:
    """Oracle backed by a spawned sidecar process on standard streams."""

    kind = "external"

    def __init__(
        self,
        command,
        threshold: float = DEFAULT_THRESHOLD,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        if not (0.0 <= threshold <= 1.0):
            raise OracleProtocolError(f"threshold must be in [0, 1], got {threshold}")
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.threshold = threshold
        self.timeout = timeout
        self.query_count = 0
        self._next_id = 0
        self._lock = threading.Lock()
        self._pending: dict[int, dict] = {}
        self._lines_seen = 0
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise OracleSpawnError(f"cannot spawn oracle {argv!r}: {exc}") from exc
        self._queue: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self.classes = self._handshake()

    def _pump(self) -> None:
        try:
            for line in self._proc.stdout:
                self._queue.put(line.rstrip("\n"))
        finally:
            self._queue.put(None)  # EOF sentinel

    def _send(self, line: str) -> None:
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleProtocolError("oracle terminated") from exc

    def _read_object(self) -> dict:
        try:
            line = self._queue.get(timeout=self.timeout)
        except queue.Empty:
            raise OracleTimeoutError(f"oracle reply timed out after {self.timeout}s") from None
        if line is None:
            raise OracleProtocolError("oracle terminated")
        self._lines_seen += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise OracleProtocolError(
                f"protocol error at line {self._lines_seen}: invalid JSON: {line!r}"
            ) from exc
        if not isinstance(obj, dict):
            raise OracleProtocolError(
                f"protocol error at line {self._lines_seen}: expected an object, got {line!r}"
            )
        return obj

    def _handshake(self) -> tuple[str, ...]:
        try:
            self._send(json.dumps({"hello": PROTOCOL_VERSION}, separators=(",", ":")))
            reply = self._read_object()
        except (OracleProtocolError, OracleTimeoutError) as exc:
            self.close()
            raise OracleSpawnError(f"oracle handshake failed: {exc}") from exc
        if reply.get("hello") != PROTOCOL_VERSION:
            self.close()
            raise OracleSpawnError(
                f"protocol version mismatch: expected {PROTOCOL_VERSION}, got {reply.get('hello')!r}"
            )
        classes = reply.get("classes")
        if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
            self.close()
            raise OracleSpawnError("oracle handshake missing class list")
        return tuple(classes)

    def detect(self, image: Image) -> DetectionSet:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            self.query_count += 1  # counts the dispatch even if the reply fails
            self._send(encode_request(request_id, image, self.threshold))
            while True:
                if request_id in self._pending:
                    obj = self._pending.pop(request_id)
                else:
                    obj = self._read_object()
                    got = obj.get("id")
                    if got != request_id:
                        # out-of-order replies are buffered and re-matched by id
                        if isinstance(got, int):
                            self._pending[got] = obj
                            continue
                        raise OracleProtocolError(
                            f"protocol error at line {self._lines_seen}: reply without id"
                        )
                if "error" in obj:
                    raise OracleProtocolError(f"oracle error: {obj['error']}")
                dets = parse_response_detections(obj)
                return DetectionSet(
                    tuple(d for d in dets if d.confidence >= self.threshold)
                )

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def spawn_external(
    command, threshold: float = DEFAULT_THRESHOLD, timeout: float = DEFAULT_TIMEOUT
) -> ExternalOracle:
    """Spawn a sidecar process and complete the protocol handshake."""
    return ExternalOracle(command, threshold=threshold, timeout=timeout)


# --------------------------------------------------------------------------
# Serving side: expose a toy model over the same wire protocol, so the
# toolkit itself ships a conformant sidecar (`redtide oracle serve-toy`).

def serve_model(model: ToyDetectorModel, stdin, stdout, threshold: float = 0.0) -> int:
    """Serve ``model`` over text streams until the input closes. Returns 0."""

    def emit(obj: dict) -> None:
        stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
        stdout.flush()

    first = stdin.readline()
    if not first:
        return 0
    try:
        hello = json.loads(first)
        if hello.get("hello") != PROTOCOL_VERSION:
            emit({"id": -1, "error": f"unsupported protocol version {hello.get('hello')!r}"})
            return 0
    except json.JSONDecodeError:
        emit({"id": -1, "error": "handshake is not valid JSON"})
        return 0
    emit({"hello": PROTOCOL_VERSION, "classes": list(model.class_names)})
    for line in stdin:
        if not line.strip():
            continue
        try:
            request_id, image, req_threshold = decode_request(line)
        except Exception as exc:
            try:
                request_id = int(json.loads(line).get("id", -1))
            except Exception:
                request_id = -1
            emit({"id": request_id, "error": f"bad request: {exc}"})
            continue
        dets = forward(model, image, threshold=max(threshold, req_threshold))
        stdout.write(encode_response(request_id, dets) + "\n")
        stdout.flush()
    return 0
