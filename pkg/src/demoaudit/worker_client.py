"""Client side of the line-delimited JSON annotation-worker protocol.

Endpoints:
  ``cmd:<command line>``  spawn the worker as a subprocess and talk over stdio
  ``tcp:<host>:<port>``   connect to a long-running worker over TCP

The worker speaks first with a handshake line ``{"v": 1, "hello":
"audit-worker"}`` (extra keys such as ``version`` are allowed); after that,
every request line receives exactly one response line, in order. Requests
that fail inside the worker come back as error objects and surface here as
per-image :class:`AnnotationFailure`; anything that breaks the framing is a
fatal :class:`WorkerProtocolError`.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess

from .annotator import (
    DEFAULT_MIN_CONF,
    Box,
    FaceAnnotation,
    FaceDetection,
    expected_age,
    make_annotation,
)
from .dataset import ImageRecord
from .errors import (
    AnnotationFailure,
    AnnotatorUnavailable,
    InvalidPosterior,
    OutOfRange,
    WorkerProtocolError,
)

__all__ = ["PROTOCOL_VERSION", "WorkerClient", "WorkerAnnotator"]

PROTOCOL_VERSION = 1
HELLO = "audit-worker"


class WorkerClient:
    def __init__(self, endpoint: str, timeout: float = 60.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self.worker_version = "worker"
        self._proc: subprocess.Popen | None = None
        self._sock: socket.socket | None = None
        self._reader = None
        self._writer = None

    def open(self) -> None:
        try:
            if self.endpoint.startswith("cmd:"):
                command = shlex.split(self.endpoint[len("cmd:"):])
                self._proc = subprocess.Popen(
                    command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    encoding="utf-8",
                    bufsize=1,
                )
                self._reader = self._proc.stdout
                self._writer = self._proc.stdin
            elif self.endpoint.startswith("tcp:"):
                host, _, port = self.endpoint[len("tcp:"):].rpartition(":")
                self._sock = socket.create_connection((host, int(port)), timeout=self.timeout)
                self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
                self._writer = self._sock.makefile("w", encoding="utf-8", newline="\n")
            else:
                raise AnnotatorUnavailable(
                    f"endpoint must start with 'cmd:' or 'tcp:', got {self.endpoint!r}"
                )
        except (OSError, ValueError) as exc:
            raise AnnotatorUnavailable(f"cannot reach worker {self.endpoint!r}: {exc}") from exc
        self._read_handshake()

    def _read_handshake(self) -> None:
        line = self._readline()
        if line is None:
            raise AnnotatorUnavailable(f"worker {self.endpoint!r} closed before handshake")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AnnotatorUnavailable(f"bad handshake from {self.endpoint!r}: {line!r}") from exc
        if obj.get("v") != PROTOCOL_VERSION or obj.get("hello") != HELLO:
            raise AnnotatorUnavailable(f"unexpected handshake {obj!r}")
        self.worker_version = str(obj.get("version", "worker"))

    def _readline(self) -> str | None:
        try:
            line = self._reader.readline()
        except OSError as exc:
            raise WorkerProtocolError(f"read from worker failed: {exc}") from exc
        return line.rstrip("\n") if line else None

    def request(self, obj: dict) -> dict:
        try:
            self._writer.write(json.dumps(obj, ensure_ascii=False) + "\n")
            self._writer.flush()
        except (OSError, BrokenPipeError) as exc:
            raise WorkerProtocolError(f"write to worker failed: {exc}") from exc
        line = self._readline()
        if not line:
            raise WorkerProtocolError("worker closed the connection mid-request")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise WorkerProtocolError(f"unparseable worker response: {line!r}") from exc
        if response.get("v") != PROTOCOL_VERSION:
            raise WorkerProtocolError(f"response protocol version {response.get('v')!r}")
        if response.get("image_id") != obj["image_id"]:
            raise WorkerProtocolError(
                f"response image_id {response.get('image_id')!r} != request {obj['image_id']!r}"
            )
        error = response.get("error")
        if error is not None:
            raise AnnotationFailure(
                f"{error.get('code', 'error')}: {error.get('message', '')}"
            )
        return response

    def detect(self, image_id: str, payload: str) -> list[FaceDetection]:
        response = self.request(
            {"v": PROTOCOL_VERSION, "task": "detect", "image_id": image_id, "image_payload": payload}
        )
        try:
            return [
                FaceDetection(
                    image_id=image_id,
                    box=Box(float(b["x"]), float(b["y"]), float(b["w"]), float(b["h"])),
                    confidence=float(b["conf"]),
                )
                for b in response["boxes"]
            ]
        except (KeyError, TypeError, ValueError, OutOfRange) as exc:
            raise WorkerProtocolError(f"bad detect payload: {exc}") from exc

    def age_posterior(self, image_id: str, payload: str, box: Box) -> list[float]:
        response = self.request(
            {
                "v": PROTOCOL_VERSION,
                "task": "age",
                "image_id": image_id,
                "image_payload": payload,
                "box": {"x": box.x, "y": box.y, "w": box.w, "h": box.h},
            }
        )
        posterior = response.get("posterior")
        if not isinstance(posterior, list):
            raise WorkerProtocolError("age response lacks a posterior list")
        return [float(p) for p in posterior]

    def gender_score(self, image_id: str, payload: str, box: Box) -> float:
        response = self.request(
            {
                "v": PROTOCOL_VERSION,
                "task": "gender",
                "image_id": image_id,
                "image_payload": payload,
                "box": {"x": box.x, "y": box.y, "w": box.w, "h": box.h},
            }
        )
        try:
            return float(response["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise WorkerProtocolError(f"bad gender payload: {exc}") from exc

    def close(self) -> None:
        for stream in (self._writer, self._reader):
            try:
                if stream is not None:
                    stream.close()
            except OSError:
                pass
        if self._sock is not None:
            self._sock.close()
        if self._proc is not None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class WorkerAnnotator:
    """Annotator backed by a remote worker.

    Only detections clearing the confidence gate are sent on for age and
    gender estimates, mirroring the audit's annotation phase; the pipeline's
    own gate then keeps them all.
    """

    def __init__(self, endpoint: str, min_conf: float = DEFAULT_MIN_CONF, timeout: float = 60.0):
        self.client = WorkerClient(endpoint, timeout=timeout)
        self.client.open()
        self.min_conf = min_conf
        self.version = self.client.worker_version

    def annotate(self, image: ImageRecord) -> list[FaceAnnotation]:
        payload = image.uri
        detections = self.client.detect(image.image_id, payload)
        annotations: list[FaceAnnotation] = []
        for det in detections:
            if det.confidence < self.min_conf:
                continue
            posterior = self.client.age_posterior(image.image_id, payload, det.box)
            score = self.client.gender_score(image.image_id, payload, det.box)
            try:
                annotations.append(
                    make_annotation(det, expected_age(posterior), score, self.version)
                )
            except (InvalidPosterior, OutOfRange) as exc:
                raise AnnotationFailure(f"invalid annotation values: {exc}") from exc
        return annotations

    def close(self) -> None:
        self.client.close()
