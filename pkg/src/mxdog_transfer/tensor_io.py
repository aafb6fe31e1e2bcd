"""Image rasters, image files and the binary weight-file format.

Images are plain numpy arrays of shape ``(height, width, channels)`` with
``channels`` in {1, 3}.  Pixel images live in [0, 1] (byte / 255).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = [
    "ImageError",
    "WeightFormatError",
    "ConvParams",
    "as_image",
    "load_image",
    "save_image",
    "resize_longest_edge",
    "resize_to_longest_edge",
    "read_weights",
    "write_weights",
]

WEIGHT_MAGIC = b"NSTW"
WEIGHT_VERSION = 1

_SUPPORTED_FORMATS = {"PNG", "PPM"}


class ImageError(ValueError):
    """Raised for unreadable, unsupported or malformed images."""


class WeightFormatError(ValueError):
    """Raised when a weight file violates the NSTW layout."""


def as_image(data, dtype=None) -> np.ndarray:
    """Validate ``data`` as an image tensor and return it as a 3-D array.

    2-D input is promoted to a single channel.
    """
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ImageError(f"image must be HxWxC, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise ImageError(f"zero-size image {h}x{w}")
    if c not in (1, 3):
        raise ImageError(f"image must have 1 or 3 channels, got {c}")
    return arr


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM/PGM file into a float32 image in [0, 1].

    Alpha is dropped; palette images are expanded to RGB.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in _SUPPORTED_FORMATS:
                raise ImageError(f"{path}: unsupported format {im.format}")
            mode = im.mode
            if mode in ("L", "RGB"):
                pass
            elif mode == "LA":
                im = im.convert("L")
            elif mode in ("RGBA", "P", "PA"):
                im = im.convert("RGB")
            elif mode == "1":
                im = im.convert("L")
            else:
                raise ImageError(f"{path}: unsupported pixel mode {mode} (8-bit only)")
            raw = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise ImageError(f"{path}: no such file") from exc
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"{path}: cannot read image ({exc})") from exc
    if raw.size == 0:
        raise ImageError(f"{path}: zero-size image")
    return as_image(raw.astype(np.float32) / np.float32(255.0))


def quantize(img) -> np.ndarray:
    """Clamp to [0, 1] and round half up onto the byte grid."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    """Write an image as PNG, or as P6/P5 when the suffix is .ppm/.pgm/.pnm."""
    arr = as_image(img)
    path = Path(path)
    data = quantize(arr)
    mode = "RGB" if data.shape[2] == 3 else "L"
    pil = Image.fromarray(data if mode == "RGB" else data[:, :, 0], mode=mode)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pgm", ".pnm") else "PNG"
    try:
        pil.save(path, format=fmt)
    except OSError as exc:
        raise ImageError(f"{path}: cannot write image ({exc})") from exc


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    lo = np.floor(x).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = x - lo
    return lo, hi, frac


def resize_longest_edge(img, max_edge: int) -> np.ndarray:
    """Bilinearly downsample so that ``max(H, W) == max_edge``.

    Images already within the limit are returned unchanged.
    """
    if max_edge < 1:
        raise ValueError("max_edge must be >= 1")
    arr = as_image(img)
    if max(arr.shape[:2]) <= max_edge:
        return arr
    return resize_to_longest_edge(arr, max_edge)


def resize_to_longest_edge(img, edge: int) -> np.ndarray:
    """Bilinear resample (up or down) so that ``max(H, W) == edge``."""
    if edge < 1:
        raise ValueError("edge must be >= 1")
    arr = as_image(img)
    h, w, _ = arr.shape
    longest = max(h, w)
    if longest == edge:
        return arr
    scale = edge / longest
    new_h = edge if h == longest else max(1, math.floor(h * scale + 0.5))
    new_w = edge if w == longest else max(1, math.floor(w * scale + 0.5))

    src = arr.astype(np.float64)
    lo, hi, f = _bilinear_axis(h, new_h)
    f = f[:, None, None]
    rows = src[lo] * (1.0 - f) + src[hi] * f
    lo, hi, f = _bilinear_axis(w, new_w)
    f = f[None, :, None]
    out = rows[:, lo] * (1.0 - f) + rows[:, hi] * f
    return out.astype(arr.dtype)


@dataclass(frozen=True)
class ConvParams:
    """One convolution layer's parameters.

    ``kernel`` has shape (out, in, kh, kw) in cross-correlation orientation.
    """

    name: str
    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise WeightFormatError(f"{self.name}: kernel must be 4-D")
        if self.bias.shape != (self.kernel.shape[0],):
            raise WeightFormatError(
                f"{self.name}: bias shape {self.bias.shape} does not match "
                f"{self.kernel.shape[0]} output channels"
            )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(int(s) for s in self.kernel.shape)

    @property
    def n_params(self) -> int:
        return int(self.kernel.size + self.bias.size)


def write_weights(layers, path) -> None:
    """Serialize conv layers to the NSTW little-endian format."""
    names = [layer.name for layer in layers]
    if len(set(names)) != len(names):
        raise WeightFormatError("duplicate layer name")
    chunks = [WEIGHT_MAGIC, struct.pack("<II", WEIGHT_VERSION, len(layers))]
    for layer in layers:
        name = layer.name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<4I", *layer.shape))
        chunks.append(np.ascontiguousarray(layer.kernel, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFormatError(
                f"length mismatch: file ends inside {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos})"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_weights(path) -> list[ConvParams]:
    """Parse an NSTW weight file into an ordered list of :class:`ConvParams`."""
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != WEIGHT_MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}, expected {WEIGHT_MAGIC!r}")
    version = r.u32("version")
    if version != WEIGHT_VERSION:
        raise WeightFormatError(f"version mismatch: got {version}, expected {WEIGHT_VERSION}")
    count = r.u32("layer count")
    layers: list[ConvParams] = []
    seen: set[str] = set()
    for idx in range(count):
        n = r.u32(f"layer {idx} name length")
        try:
            name = r.take(n, f"layer {idx} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"layer {idx}: name is not valid UTF-8") from exc
        if name in seen:
            raise WeightFormatError(f"duplicate layer name {name!r}")
        seen.add(name)
        out_c, in_c, kh, kw = (r.u32(f"{name} shape") for _ in range(4))
        n_kernel = out_c * in_c * kh * kw
        kernel = np.frombuffer(r.take(4 * n_kernel, f"{name} kernel"), dtype="<f4")
        bias = np.frombuffer(r.take(4 * out_c, f"{name} bias"), dtype="<f4")
        layers.append(ConvParams(
            name,
            kernel.astype(np.float32).reshape(out_c, in_c, kh, kw),
            bias.astype(np.float32),
        ))
    if r.pos != len(buf):
        raise WeightFormatError(
            f"length mismatch: {len(buf) - r.pos} trailing bytes after {count} layers"
        )
    return layers
