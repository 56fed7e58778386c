"""Image decoding and the three-view preprocessing pipeline.

Every image is consumed through one of three views: the whole image
resized to the network input size (global and scene views) or a fixed-ratio
center crop resized to the same size (local view). All operations are pure
and deterministic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DecodeError, IoError, ShapeError

# Standard normalization constants of the large-scale image corpora the
# published backbones were trained on.
DEFAULT_MEANS = (0.485, 0.456, 0.406)
DEFAULT_STDS = (0.229, 0.224, 0.225)
DEFAULT_INPUT_SIZE = 224
DEFAULT_CROP_RATIO = 0.62


class ViewKind(Enum):
    GLOBAL = "global"
    LOCAL = "local"
    SCENE = "scene"


@dataclass(frozen=True)
class RawImage:
    """Decoded RGB pixels, row-major uint8, shape (height, width, 3).

    ``source_hash`` is the SHA-256 of the originating file when the image
    was loaded from disk; in-memory images hash their pixel buffer lazily.
    """

    pixels: np.ndarray
    source_hash: str | None = None

    def __post_init__(self) -> None:
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ShapeError(f"expected (h, w, 3) uint8 pixels, got {p.shape} {p.dtype}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ShapeError("image must be at least 1x1")
        p.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def content_hash(self) -> str:
        if self.source_hash is not None:
            return self.source_hash
        h = hashlib.sha256()
        h.update(np.asarray(self.pixels.shape, dtype=np.int64).tobytes())
        h.update(self.pixels.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class CropSpec:
    """Per-dimension center-crop ratio in (0, 1]."""

    ratio: float = DEFAULT_CROP_RATIO

    def __post_init__(self) -> None:
        if not (0.0 < self.ratio <= 1.0):
            raise ValueError(f"crop ratio must be in (0, 1], got {self.ratio}")


@dataclass(frozen=True)
class PreprocessConfig:
    input_size: int = DEFAULT_INPUT_SIZE
    channel_means: tuple[float, float, float] = DEFAULT_MEANS
    channel_stds: tuple[float, float, float] = DEFAULT_STDS
    crop: CropSpec = field(default_factory=CropSpec)

    def __post_init__(self) -> None:
        if self.input_size < 8:
            raise ValueError("input_size must be >= 8")
        if any(s <= 0 for s in self.channel_stds):
            raise ValueError("channel stds must be positive")

    def digest(self) -> str:
        """Stable hash of the configuration, used in cache keys."""
        text = "|".join(
            [
                str(self.input_size),
                ",".join(format(m, ".17g") for m in self.channel_means),
                ",".join(format(s, ".17g") for s in self.channel_stds),
                format(self.crop.ratio, ".17g"),
            ]
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_image(path) -> RawImage:
    """Decode a PNG or JPEG file into an RGB image.

    Grayscale sources are channel-replicated; alpha channels are dropped.
    """
    from PIL import Image, UnidentifiedImageError

    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise IoError(f"cannot read image file {path}: {e}") from e
    h = hashlib.sha256(raw).hexdigest()
    import io

    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            rgb = im.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise DecodeError(f"cannot decode image {path}: {e}") from e
    return RawImage(pixels=pixels, source_hash=h)


def center_crop(img: RawImage, crop: CropSpec) -> RawImage:
    """Crop the center region, each dimension scaled by ``crop.ratio``.

    Output dims are floor(ratio * dim) clamped to >= 1; the top-left offset
    is floor((dim - out) / 2). Pixels are copied verbatim.
    """
    cw = max(1, int(crop.ratio * img.width))
    ch = max(1, int(crop.ratio * img.height))
    x0 = (img.width - cw) // 2
    y0 = (img.height - ch) // 2
    out = img.pixels[y0 : y0 + ch, x0 : x0 + cw].copy()
    return RawImage(pixels=out)


def resize_bilinear(img: RawImage, out_w: int, out_h: int) -> RawImage:
    """Bilinear resize with half-pixel-center mapping and edge clamping.

    Does not preserve aspect ratio; the whole source maps onto the output.
    """
    if out_w < 1 or out_h < 1:
        raise ShapeError("output dims must be >= 1")
    if out_w == img.width and out_h == img.height:
        return RawImage(pixels=img.pixels.copy())
    src = img.pixels.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * img.height / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * img.width / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, img.height - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    x1 = np.minimum(x0 + 1, img.width - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]

    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return RawImage(pixels=out)


def to_tensor(img: RawImage, cfg: PreprocessConfig) -> np.ndarray:
    """Convert a square image into a normalized (3, size, size) float32 tensor.

    value[c][y][x] = (pixel / 255 - mean[c]) / std[c].
    """
    if img.width != cfg.input_size or img.height != cfg.input_size:
        raise ShapeError(
            f"image is {img.width}x{img.height}, expected {cfg.input_size}x{cfg.input_size}"
        )
    means = np.asarray(cfg.channel_means, dtype=np.float64)
    stds = np.asarray(cfg.channel_stds, dtype=np.float64)
    chw = img.pixels.astype(np.float64).transpose(2, 0, 1)
    out = (chw / 255.0 - means[:, None, None]) / stds[:, None, None]
    return out.astype(np.float32)


def prepare_view(img: RawImage, view: ViewKind, cfg: PreprocessConfig) -> np.ndarray:
    """Produce the network input tensor for one view of an image."""
    if view is ViewKind.LOCAL:
        img = center_crop(img, cfg.crop)
    resized = resize_bilinear(img, cfg.input_size, cfg.input_size)
    return to_tensor(resized, cfg)
