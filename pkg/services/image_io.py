import io
import logging
import os
from typing import List, Literal, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from models.evaluation import Corpus
from utils.errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".pgm", ".pnm", ".png")

RESAMPLING = {
    "area": Image.Resampling.BOX,
    "bilinear": Image.Resampling.BILINEAR,
    "lanczos": Image.Resampling.LANCZOS,
}


def _to_intensity(img: Image.Image) -> np.ndarray:
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.uint8).astype(float) / 255.0


def load_grayscale(path: str) -> np.ndarray:
    """8-bit grayscale image as float intensities x/255."""
    try:
        with Image.open(path) as img:
            return _to_intensity(img)
    except (UnidentifiedImageError, OSError) as e:
        raise DomainError(f"Cannot read image {path}: {e}")


def load_grayscale_bytes(data: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return _to_intensity(img)
    except (UnidentifiedImageError, OSError) as e:
        raise DomainError(f"Cannot decode uploaded image: {e}")


def center_square(image: np.ndarray) -> np.ndarray:
    rows, cols = image.shape
    side = min(rows, cols)
    top = (rows - side) // 2
    left = (cols - side) // 2
    return image[top: top + side, left: left + side]


def downsample(image: np.ndarray, size: int, method: str = "area") -> np.ndarray:
    """
    Center-crop to a square and resample to size x size. Area averaging of
    an integer factor is done by block means; other ratios go through Pillow.
    """
    if method not in RESAMPLING:
        raise ConfigurationError(f"Unknown downsampling method '{method}'")
    square = center_square(np.asarray(image, dtype=float))
    side = square.shape[0]
    if side == size:
        return square.copy()
    if method == "area" and side % size == 0:
        factor = side // size
        return square.reshape(size, factor, size, factor).mean(axis=(1, 3))

    img = Image.fromarray(square.astype(np.float32))
    resized = img.resize((size, size), RESAMPLING[method])
    return np.asarray(resized, dtype=float)


def list_images(directory: str) -> List[str]:
    if not directory or not os.path.isdir(directory):
        raise DomainError(f"Corpus directory {directory!r} does not exist")
    names = sorted(
        name for name in os.listdir(directory)
        if name.lower().endswith(IMAGE_EXTENSIONS)
    )
    return [os.path.join(directory, name) for name in names]


def load_corpus(directory: str, split: Literal["train", "test"], size: int,
                method: str = "area") -> Corpus:
    paths = list_images(directory)
    if not paths:
        raise DomainError(f"No images found in {directory}")

    images = []
    ids = []
    for path in paths:
        images.append(downsample(load_grayscale(path), size, method))
        ids.append(os.path.basename(path))
    logger.info(f"Loaded {len(images)} {split} images from {directory} at {size}x{size}")
    return Corpus(images=images, ids=ids, split=split, source_dir=os.path.abspath(directory))


def write_gray(path: str, image_u8: np.ndarray):
    """Write an 8-bit grayscale array as binary PGM (P5) or PNG by extension."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    img = Image.fromarray(np.asarray(image_u8, dtype=np.uint8))
    fmt = "PNG" if path.lower().endswith(".png") else "PPM"
    img.save(path, format=fmt)


def normalize_to_u8(values: np.ndarray) -> Tuple[np.ndarray, float, float]:
    values = np.asarray(values, dtype=float)
    lo = float(values.min())
    hi = float(values.max())
    if hi > lo:
        scaled = np.round((values - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(values)
    return scaled.astype(np.uint8), lo, hi


def write_heatmap(path: str, values: np.ndarray) -> Tuple[float, float]:
    """
    Min-max normalized 8-bit map plus a companion `<path>.txt` holding the
    min and max, so that value = lo + pixel / 255 * (hi - lo).
    """
    image_u8, lo, hi = normalize_to_u8(values)
    write_gray(path, image_u8)
    with open(path + ".txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"min={lo!r}\nmax={hi!r}\n")
    logger.info(f"Heatmap written to {path} (min={lo:.6g}, max={hi:.6g})")
    return lo, hi
