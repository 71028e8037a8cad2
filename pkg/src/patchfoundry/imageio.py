"""On-disk raster decoding/encoding (CLI-layer boundary).

The core modules consume decoded ``GrayImage`` rasters only; anything
Pillow can decode is accepted here.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .imgcore import GrayImage, to_gray

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class ImageDecodeError(RuntimeError):
    pass


def load_gray(path: Path | str) -> GrayImage:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except Exception as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc
    return to_gray(arr)


def save_gray_png(path: Path | str, img: GrayImage) -> None:
    px = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    Image.fromarray(px, mode="L").save(path, format="PNG")


def encode_gray_png(img: GrayImage) -> bytes:
    import io

    px = np.clip(np.rint(img.pixels), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(px, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def list_images(directory: Path | str) -> list[Path]:
    directory = Path(directory)
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )
