"""Wire protocol: one JSON object per line over stdio or TCP.

The worker speaks first with ``{"v": 1, "hello": "audit-worker", "version":
...}``; afterwards every request line gets exactly one response line, in
order. Request-level problems come back as error objects; only a line that
cannot be framed as a request at all is a protocol violation.
"""

from __future__ import annotations

import json

PROTOCOL_VERSION = 1
HELLO = "audit-worker"
TASKS = ("detect", "age", "gender")


class ProtocolViolation(Exception):
    """Unframeable input; the serve loop exits on this."""


class RequestError(Exception):
    """Bad request content; reported as a per-request error object."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def handshake_line(version: str) -> str:
    return json.dumps({"v": PROTOCOL_VERSION, "hello": HELLO, "version": version})


def parse_request(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolViolation(f"unparseable request line: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolViolation("request is not a JSON object")
    if obj.get("v") != PROTOCOL_VERSION:
        raise RequestError("bad_version", f"protocol version must be {PROTOCOL_VERSION}")
    task = obj.get("task")
    if task not in TASKS:
        raise RequestError("bad_task", f"task must be one of {TASKS}, got {task!r}")
    if not isinstance(obj.get("image_id"), str):
        raise RequestError("missing_field", "image_id must be a string")
    if not isinstance(obj.get("image_payload"), str):
        raise RequestError("missing_field", "image_payload must be a string")
    if task in ("age", "gender"):
        box = obj.get("box")
        if not isinstance(box, dict):
            raise RequestError("missing_field", f"{task} request needs a box object")
        try:
            obj["box"] = {k: float(box[k]) for k in ("x", "y", "w", "h")}
        except (KeyError, TypeError, ValueError) as exc:
            raise RequestError("bad_box", f"box needs numeric x, y, w, h: {exc}") from exc
        if obj["box"]["w"] <= 0 or obj["box"]["h"] <= 0:
            raise RequestError("bad_box", "box sides must be positive")
    return obj


def detect_response(image_id: str, boxes: list[dict]) -> str:
    return json.dumps({"v": PROTOCOL_VERSION, "image_id": image_id, "boxes": boxes})


def age_response(image_id: str, posterior: list[float]) -> str:
    return json.dumps({"v": PROTOCOL_VERSION, "image_id": image_id, "posterior": posterior})


def gender_response(image_id: str, score: float) -> str:
    return json.dumps({"v": PROTOCOL_VERSION, "image_id": image_id, "score": score})


def error_response(image_id: str | None, code: str, message: str) -> str:
    return json.dumps(
        {
            "v": PROTOCOL_VERSION,
            "image_id": image_id,
            "error": {"code": code, "message": message},
        }
    )
