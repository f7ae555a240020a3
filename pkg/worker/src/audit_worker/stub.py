"""Weightless stub behaviors.

Serve mode answers every request with fixed, schema-valid payloads so
protocol consumers can be tested without weights. Batch mode reproduces the
pipeline's deterministic stub annotator bit-for-bit from the shared
contract:

  head  = sha256("{image_id}|{seed}")          -> n_faces = head[0] % 3
  words = sha256("{image_id}|{seed}|{k}") split into 4-byte big-endian
          words w0..w6 for face k
  x = (w0 % 44800)/100      y = (w1 % 44800)/100
  w = 16 + (w2 % 19200)/100 h = 16 + (w3 % 19200)/100
  conf  = (80000 + (w4 % 20001))/100000
  age   = (w5 % 10001)/100
  score = (w6 % 1000001)/1000000

Every value is a small decimal fraction, so the fixed 6-decimal shard
serialization is exact on any platform.
"""

from __future__ import annotations

import hashlib

STUB_SERVE_BOX = {"x": 16.0, "y": 16.0, "w": 64.0, "h": 64.0, "conf": 0.95}
STUB_SERVE_AGE_BIN = 35
STUB_SERVE_GENDER_SCORE = 0.75


def serve_posterior() -> list[float]:
    posterior = [0.0] * 101
    posterior[STUB_SERVE_AGE_BIN] = 1.0
    return posterior


def _words(parts: list[object]) -> list[int]:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 32, 4)]


def batch_faces(image_id: str, seed: int) -> list[dict]:
    """Deterministic face tuples for one image; zero to two faces."""
    n_faces = _words([image_id, seed])[0] % 3
    faces = []
    for k in range(n_faces):
        w = _words([image_id, seed, k])
        faces.append(
            {
                "x": (w[0] % 44800) / 100,
                "y": (w[1] % 44800) / 100,
                "w": 16 + (w[2] % 19200) / 100,
                "h": 16 + (w[3] % 19200) / 100,
                "conf": (80000 + (w[4] % 20001)) / 100000,
                "age": (w[5] % 10001) / 100,
                "score": (w[6] % 1000001) / 1000000,
            }
        )
    return faces


def stub_version(seed: int) -> str:
    return f"stub-v1-seed{seed}"
