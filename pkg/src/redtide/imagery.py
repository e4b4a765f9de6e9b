"""Pixel rasters, image file IO, patch compositing, and input sanitizers.

All operations are pure: inputs are never mutated and every returned
:class:`Image` owns a fresh, read-only pixel buffer. Compositing is kept
pixel-exact on purpose (quarter-turn rotations, nearest-neighbour
scaling, round-half-up blending) so attack artifacts are bit-reproducible.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ImageFormatError, PatchPlacementError

QUARTER_TURNS = (0, 90, 180, 270)


def _freeze(pixels: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image:
    """RGB raster with 8-bit intensities, row-major ``(height, width, 3)``."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = self.pixels
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageFormatError(f"expected (h, w, 3) pixel array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageFormatError("image must be at least 1x1")
        object.__setattr__(self, "pixels", _freeze(arr))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def filled(cls, width: int, height: int, color: tuple[int, int, int] = (0, 0, 0)) -> "Image":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:, :] = color
        return cls(arr)

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def same_pixels(self, other: "Image") -> bool:
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


@dataclass(frozen=True)
class Patch:
    """Adversarial patch: a raster plus a blend opacity in [0, 1]."""

    raster: Image
    alpha: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise PatchPlacementError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class PatchTransform:
    """Placement of a patch: top-left anchor, quarter-turn rotation, scale."""

    location: tuple[int, int] = (0, 0)
    rotation: int = 0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.rotation not in QUARTER_TURNS:
            raise PatchPlacementError(f"rotation must be one of {QUARTER_TURNS}, got {self.rotation}")
        if not self.scale > 0:
            raise PatchPlacementError(f"scale must be positive, got {self.scale}")


# --------------------------------------------------------------------------
# File IO: PNG (via Pillow, lossless) and binary PPM (P6, maxval 255).

def encode_ppm(image: Image) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.tobytes()


def decode_ppm(data: bytes) -> Image:
    stream = io.BytesIO(data)
    fields: list[bytes] = []
    if stream.read(2) != b"P6":
        raise ImageFormatError("malformed image: not a binary PPM (P6) payload")
    while len(fields) < 3:
        ch = stream.read(1)
        if not ch:
            raise ImageFormatError("malformed image: truncated PPM header")
        if ch == b"#":  # comment runs to end of line
            while ch not in (b"\n", b""):
                ch = stream.read(1)
            continue
        if ch.isspace():
            continue
        token = bytearray()
        while ch and not ch.isspace() and ch != b"#":
            token += ch
            ch = stream.read(1)
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = stream.read(1)
        fields.append(bytes(token))
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageFormatError(f"malformed image: non-numeric PPM header field {fields}") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"malformed image: bad dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported bit depth: maxval {maxval}, only 255 supported")
    payload = stream.read(width * height * 3)
    if len(payload) != width * height * 3:
        raise ImageFormatError(
            f"malformed image: expected {width * height * 3} pixel bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(arr)


def load_image(path: str | Path) -> Image:
    """Read a PNG or binary PPM file into an :class:`Image`."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"unreadable file: {path}: {exc}") from exc
    if data[:2] == b"P6":
        return decode_ppm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image as PILImage

        try:
            with PILImage.open(io.BytesIO(data)) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise ImageFormatError(f"malformed image: {path}: {exc}") from exc
        return Image(arr)
    raise ImageFormatError(f"unsupported format: {path} is neither PNG nor binary PPM")


def save_image(image: Image, path: str | Path) -> None:
    """Write ``image`` as PNG or PPM depending on the path suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        path.write_bytes(encode_ppm(image))
    elif suffix == ".png":
        from PIL import Image as PILImage

        PILImage.fromarray(np.asarray(image.pixels)).save(path, format="PNG")
    else:
        raise ImageFormatError(f"unsupported format for save: {suffix!r} (use .png or .ppm)")


# --------------------------------------------------------------------------
# Patch compositing.

def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


def transformed_raster(patch: Patch, transform: PatchTransform) -> np.ndarray:
    """Patch raster after nearest-neighbour scaling and quarter-turn rotation."""
    arr = np.asarray(patch.raster.pixels)
    if transform.scale != 1.0:
        new_h = max(1, int(_round_half_up(np.array(arr.shape[0] * transform.scale))))
        new_w = max(1, int(_round_half_up(np.array(arr.shape[1] * transform.scale))))
        rows = np.minimum((np.arange(new_h) * arr.shape[0]) // new_h, arr.shape[0] - 1)
        cols = np.minimum((np.arange(new_w) * arr.shape[1]) // new_w, arr.shape[1] - 1)
        arr = arr[np.ix_(rows, cols)]
    turns = transform.rotation // 90
    if turns:
        arr = np.rot90(arr, k=-turns)  # clockwise
    return arr


def patch_footprint(
    image: Image, patch: Patch, transform: PatchTransform
) -> tuple[int, int, int, int]:
    """Clipped footprint ``(x0, y0, x1, y1)`` of the transformed patch.

    Raises :class:`PatchPlacementError` when the footprint is empty.
    """
    raster = transformed_raster(patch, transform)
    x, y = transform.location
    x0, y0 = max(0, x), max(0, y)
    x1, y1 = min(image.width, x + raster.shape[1]), min(image.height, y + raster.shape[0])
    if x0 >= x1 or y0 >= y1:
        raise PatchPlacementError(
            f"zero-area footprint: patch at {transform.location} "
            f"(size {raster.shape[1]}x{raster.shape[0]}) misses {image.width}x{image.height} image"
        )
    return x0, y0, x1, y1


def apply_patch(image: Image, patch: Patch, transform: PatchTransform) -> Image:
    """Composite ``patch`` onto ``image``.

    Output pixel inside the footprint is
    ``round_half_up(alpha * patch + (1 - alpha) * original)`` clamped to
    [0, 255]; pixels outside the footprint are unchanged.
    """
    raster = transformed_raster(patch, transform)
    x0, y0, x1, y1 = patch_footprint(image, patch, transform)
    x, y = transform.location
    out = np.array(image.pixels, dtype=np.uint8, copy=True)
    src = raster[y0 - y : y1 - y, x0 - x : x1 - x].astype(np.float64)
    dst = out[y0:y1, x0:x1].astype(np.float64)
    blended = _round_half_up(patch.alpha * src + (1.0 - patch.alpha) * dst)
    out[y0:y1, x0:x1] = np.clip(blended, 0, 255).astype(np.uint8)
    return Image(out)


# --------------------------------------------------------------------------
# Input sanitization defenses.

GREY_WEIGHTS_PER_MILLE = (299, 587, 114)  # integer Rec.601


def to_greyscale(image: Image) -> Image:
    r, g, b = (image.pixels[:, :, i].astype(np.int64) for i in range(3))
    wr, wg, wb = GREY_WEIGHTS_PER_MILLE
    luma = (wr * r + wg * g + wb * b + 500) // 1000
    out = np.repeat(luma[:, :, None], 3, axis=2).astype(np.uint8)
    return Image(out)


def quantize(image: Image, levels: int) -> Image:
    if levels < 2:
        raise ImageFormatError(f"quantize needs at least 2 levels, got {levels}")
    steps = np.asarray(
        _round_half_up(np.arange(levels) * 255.0 / (levels - 1)), dtype=np.uint8
    )
    idx = _round_half_up(image.pixels.astype(np.float64) * (levels - 1) / 255.0).astype(np.int64)
    return Image(steps[idx])


def box_blur(image: Image, radius: int) -> Image:
    if radius < 1:
        raise ImageFormatError(f"box blur radius must be >= 1, got {radius}")
    h, w = image.height, image.width
    padded = np.zeros((h + 1, w + 1, 3), dtype=np.int64)
    padded[1:, 1:] = image.pixels
    integral = padded.cumsum(axis=0).cumsum(axis=1)
    ys, xs = np.arange(h), np.arange(w)
    y0 = np.maximum(ys - radius, 0)
    y1 = np.minimum(ys + radius + 1, h)
    x0 = np.maximum(xs - radius, 0)
    x1 = np.minimum(xs + radius + 1, w)
    # window sum via the integral image, per pixel
    sums = (
        integral[y1[:, None], x1[None, :]]
        - integral[y0[:, None], x1[None, :]]
        - integral[y1[:, None], x0[None, :]]
        + integral[y0[:, None], x0[None, :]]
    )
    counts = (y1 - y0)[:, None] * (x1 - x0)[None, :]
    means = _round_half_up(sums / counts[:, :, None])
    return Image(np.clip(means, 0, 255).astype(np.uint8))


def sanitize(image: Image, method: str, *, levels: int | None = None, radius: int | None = None) -> Image:
    """Apply an input-sanitization defense: greyscale, quantize, or box blur."""
    if method == "greyscale":
        return to_greyscale(image)
    if method == "quantize":
        if levels is None:
            raise ImageFormatError("quantize requires levels")
        return quantize(image, levels)
    if method == "box_blur":
        if radius is None:
            raise ImageFormatError("box_blur requires radius")
        return box_blur(image, radius)
    raise ImageFormatError(f"unknown sanitize method {method!r}")
