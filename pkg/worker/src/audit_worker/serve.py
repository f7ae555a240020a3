"""Request/response loops over stdio or TCP.

Handshake first, then one response line per request line, order-preserving.
Per-request failures become error objects; the process exits only when a
line cannot be framed as a request at all (protocol violation) or the
backend fails at startup. End of input is a clean shutdown.
"""

from __future__ import annotations

import socket
import sys
from typing import IO

from .backends import Backend
from .protocol import (
    ProtocolViolation,
    RequestError,
    age_response,
    detect_response,
    error_response,
    gender_response,
    handshake_line,
    parse_request,
)


def handle_line(line: str, backend: Backend) -> str:
    image_id = None
    try:
        request = parse_request(line)
        image_id = request["image_id"]
        task = request["task"]
        payload = request["image_payload"]
        if task == "detect":
            return detect_response(image_id, backend.detect(image_id, payload))
        if task == "age":
            return age_response(image_id, backend.age(image_id, payload, request["box"]))
        return gender_response(image_id, backend.gender(image_id, payload, request["box"]))
    except RequestError as exc:
        return error_response(image_id, exc.code, str(exc))
    except ProtocolViolation:
        raise
    except Exception as exc:  # model/backend failure stays request-local
        return error_response(image_id, "backend_error", f"{type(exc).__name__}: {exc}")


def serve_lines(reader: IO[str], writer: IO[str], backend: Backend) -> None:
    writer.write(handshake_line(backend.version) + "\n")
    writer.flush()
    for raw in reader:
        line = raw.strip()
        if not line:
            continue
        writer.write(handle_line(line, backend) + "\n")
        writer.flush()


def serve_stdio(backend: Backend) -> int:
    try:
        serve_lines(sys.stdin, sys.stdout, backend)
    except ProtocolViolation as exc:
        sys.stdout.write(error_response(None, "protocol", str(exc)) + "\n")
        sys.stdout.flush()
        print(f"protocol violation: {exc}", file=sys.stderr)
        return 3
    return 0


def serve_tcp(backend: Backend, host: str, port: int) -> int:
    """One connection at a time; scale with more worker processes."""
    server = socket.create_server((host, port))
    print(f"listening on {host}:{server.getsockname()[1]}", file=sys.stderr)
    try:
        while True:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8", newline="\n")
                writer = conn.makefile("w", encoding="utf-8", newline="\n")
                try:
                    serve_lines(reader, writer, backend)
                except ProtocolViolation as exc:
                    writer.write(error_response(None, "protocol", str(exc)) + "\n")
                    writer.flush()
                    print(f"protocol violation: {exc}", file=sys.stderr)
                    return 3
                except (BrokenPipeError, ConnectionResetError):
                    continue
    finally:
        server.close()
