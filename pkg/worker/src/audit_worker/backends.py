"""Model backends behind the wire protocol.

The stub backend needs no weights and never touches pixels. The TorchScript
backend wraps three pinned script modules (detector, age, gender); it is
only constructable when torch and the weight files are actually present, so
stub-only deployments carry no model dependencies.
"""

from __future__ import annotations

from typing import Protocol

from . import __version__
from .preprocess import DEFAULT_INPUT_SIZE, DEFAULT_MARGIN, crop_face, decode_payload
from .stub import STUB_SERVE_BOX, STUB_SERVE_GENDER_SCORE, serve_posterior


class BackendUnavailable(Exception):
    """Startup failure: weights or runtime missing."""


class Backend(Protocol):
    version: str

    def detect(self, image_id: str, payload: str) -> list[dict]: ...

    def age(self, image_id: str, payload: str, box: dict) -> list[float]: ...

    def gender(self, image_id: str, payload: str, box: dict) -> float: ...


class StubServeBackend:
    """Fixed schema-valid responses; deterministic across platforms."""

    def __init__(self):
        self.version = f"audit-worker/{__version__} stub"

    def detect(self, image_id: str, payload: str) -> list[dict]:
        return [dict(STUB_SERVE_BOX)]

    def age(self, image_id: str, payload: str, box: dict) -> list[float]:
        return serve_posterior()

    def gender(self, image_id: str, payload: str, box: dict) -> float:
        return STUB_SERVE_GENDER_SCORE


class TorchscriptBackend:
    """Runs pinned TorchScript modules.

    Contracts: the detector maps a float32 1xCxHxW image in [0, 1] to an
    Nx5 tensor of (x, y, w, h, conf); the age model maps a 1x3xSxS crop to
    101 logits (softmaxed here); the gender model maps the same crop to one
    logit (sigmoided here, oriented as P(female)).
    """

    def __init__(
        self,
        detector_path: str,
        age_path: str,
        gender_path: str,
        margin: float = DEFAULT_MARGIN,
        input_size: int = DEFAULT_INPUT_SIZE,
    ):
        try:
            import torch
        except ImportError as exc:
            raise BackendUnavailable(
                "torch is not installed; install the [models] extra"
            ) from exc
        self._torch = torch
        try:
            self._detector = torch.jit.load(detector_path, map_location="cpu").eval()
            self._age = torch.jit.load(age_path, map_location="cpu").eval()
            self._gender = torch.jit.load(gender_path, map_location="cpu").eval()
        except (OSError, RuntimeError, ValueError) as exc:
            raise BackendUnavailable(f"cannot load model weights: {exc}") from exc
        self.margin = margin
        self.input_size = input_size
        self.version = f"audit-worker/{__version__} ts-m{margin:.2f}-r{input_size}"

    def _to_tensor(self, image):
        import numpy as np

        array = np.asarray(image, dtype="float32") / 255.0
        return self._torch.from_numpy(array).permute(2, 0, 1).unsqueeze(0)

    def detect(self, image_id: str, payload: str) -> list[dict]:
        image = decode_payload(payload)
        with self._torch.no_grad():
            raw = self._detector(self._to_tensor(image))
        boxes = []
        for row in raw.reshape(-1, 5).tolist():
            x, y, w, h, conf = row
            if w > 0 and h > 0:
                boxes.append({"x": x, "y": y, "w": w, "h": h, "conf": min(1.0, max(0.0, conf))})
        return boxes

    def _crop_tensor(self, payload: str, box: dict):
        image = decode_payload(payload)
        crop = crop_face(image, box, margin=self.margin, input_size=self.input_size)
        return self._to_tensor(crop)

    def age(self, image_id: str, payload: str, box: dict) -> list[float]:
        with self._torch.no_grad():
            logits = self._age(self._crop_tensor(payload, box)).reshape(-1)
        posterior = self._torch.softmax(logits, dim=0).tolist()
        if len(posterior) != 101:
            raise BackendUnavailable(f"age model emitted {len(posterior)} bins, expected 101")
        return posterior

    def gender(self, image_id: str, payload: str, box: dict) -> float:
        with self._torch.no_grad():
            logit = self._gender(self._crop_tensor(payload, box)).reshape(-1)[0]
        return float(self._torch.sigmoid(logit))
