"""Visual-diversity proxy: compressed byte size of a synset's average image.

A synset whose images vary widely averages to a blurry, low-entropy image
that compresses small; near-duplicate synsets average sharp and compress
large. The byte count is only meaningful relative to other synsets scored
with the same pinned codec, which is why every score carries a codec_id.
This proxy says nothing about demographic diversity.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import NoDecodableImages

__all__ = ["DiversityScore", "average_image", "diversity_score", "CODEC_ID", "DEFAULT_DIMS"]

DEFAULT_DIMS = (256, 256)
_PNG_LEVEL = 9


def codec_id(target_dims: tuple[int, int]) -> str:
    return f"png-zl{_PNG_LEVEL}-rgb-{target_dims[0]}x{target_dims[1]}-bilinear"


CODEC_ID = codec_id(DEFAULT_DIMS)


@dataclass(frozen=True)
class DiversityScore:
    wnid: str
    n_images: int
    avg_image_dims: tuple[int, int]
    compressed_bytes: int
    codec_id: str


def average_image(
    images: Sequence[Image.Image | np.ndarray],
    target_dims: tuple[int, int] = DEFAULT_DIMS,
) -> np.ndarray:
    """Per-pixel-channel mean after bilinear resize; returns uint8 HxWx3.

    Accumulates in float64 and rounds half-up once at the end, so the result
    is permutation-invariant and deterministic.
    """
    if not images:
        raise NoDecodableImages("average_image needs at least one image")
    w, h = target_dims
    acc = np.zeros((h, w, 3), dtype=np.float64)
    for img in images:
        if isinstance(img, np.ndarray):
            img = Image.fromarray(img)
        resized = img.convert("RGB").resize((w, h), Image.BILINEAR)
        acc += np.asarray(resized, dtype=np.float64)
    mean = acc / len(images)
    return np.clip(np.floor(mean + 0.5), 0, 255).astype(np.uint8)


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, "RGB").save(buf, format="PNG", compress_level=_PNG_LEVEL, optimize=False)
    return buf.getvalue()


def diversity_score(
    wnid: str,
    image_paths: Sequence[str | Path],
    target_dims: tuple[int, int] = DEFAULT_DIMS,
) -> DiversityScore:
    """Score one synset from its image files; undecodable files are skipped.

    Raises NoDecodableImages when nothing decodes.
    """
    decoded: list[Image.Image] = []
    for path in image_paths:
        try:
            with Image.open(path) as img:
                decoded.append(img.convert("RGB"))
        except (OSError, ValueError):
            continue
    if not decoded:
        raise NoDecodableImages(f"synset {wnid!r}: none of {len(image_paths)} images decoded")
    mean = average_image(decoded, target_dims)
    return DiversityScore(
        wnid=wnid,
        n_images=len(decoded),
        avg_image_dims=target_dims,
        compressed_bytes=len(encode_png(mean)),
        codec_id=codec_id(target_dims),
    )
