"""Image payload decoding and face-crop preprocessing.

Age and gender models see the detected box expanded by a margin (default
40 percent of each side, centered, clamped to the image) and resized to a
square model input, following the expectation-regression lineage the
pipeline's annotators come from.
"""

from __future__ import annotations

import base64
import binascii
import io

from PIL import Image

from .protocol import RequestError

DEFAULT_MARGIN = 0.4
DEFAULT_INPUT_SIZE = 224


def decode_payload(payload: str) -> Image.Image:
    """`b64:`-prefixed inline bytes, or a filesystem path."""
    try:
        if payload.startswith("b64:"):
            raw = base64.b64decode(payload[len("b64:"):], validate=True)
            return Image.open(io.BytesIO(raw)).convert("RGB")
        return Image.open(payload).convert("RGB")
    except (OSError, ValueError, binascii.Error) as exc:
        raise RequestError("undecodable_image", f"cannot decode image payload: {exc}") from exc


def expand_box(
    box: dict, image_w: int, image_h: int, margin: float = DEFAULT_MARGIN
) -> tuple[float, float, float, float]:
    """Grow the box by `margin` per side around its center, clamped to the image.

    Returns (left, top, right, bottom) pixel coordinates.
    """
    cx = box["x"] + box["w"] / 2
    cy = box["y"] + box["h"] / 2
    half_w = box["w"] * (1 + margin) / 2
    half_h = box["h"] * (1 + margin) / 2
    left = max(0.0, cx - half_w)
    top = max(0.0, cy - half_h)
    right = min(float(image_w), cx + half_w)
    bottom = min(float(image_h), cy + half_h)
    if right <= left or bottom <= top:
        raise RequestError("bad_box", "box lies outside the image")
    return left, top, right, bottom


def crop_face(
    image: Image.Image,
    box: dict,
    margin: float = DEFAULT_MARGIN,
    input_size: int = DEFAULT_INPUT_SIZE,
) -> Image.Image:
    region = expand_box(box, image.width, image.height, margin)
    return image.crop(region).resize((input_size, input_size), Image.BILINEAR)
