"""Pixel substrate: clips, color conversion, resampling, convolution, clip I/O.

Frames are ``(H, W, 3)`` float64 arrays with RGB intensities in ``[0, 1]``;
a :class:`VideoClip` stacks them into a ``(T, H, W, 3)`` array.  Every
function here accepts arbitrary leading axes, so the same call works on a
single frame or a whole clip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import (
    CorruptFrameError,
    EmptyClipError,
    InconsistentFrameSizeError,
    InvalidArgumentError,
    InvalidFormatError,
    MissingManifestError,
)

__all__ = [
    "VideoClip",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "rgb_to_luma",
    "resample_bicubic",
    "convolve2d",
    "gaussian_kernel",
    "load_clip",
    "save_clip",
    "quantize8",
]

BICUBIC_A = -0.5
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class VideoClip:
    """An ordered, non-empty run of equally sized RGB frames."""

    data: np.ndarray
    fps: float
    id: str = "clip"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or data.shape[-1] != 3:
            raise InvalidFormatError(f"expected (T, H, W, 3) pixels, got shape {data.shape}")
        if data.shape[0] == 0:
            raise EmptyClipError("clip has no frames")
        if data.shape[1] < 1 or data.shape[2] < 1:
            raise InvalidFormatError("frame dimensions must be >= 1")
        if not self.fps > 0:
            raise InvalidArgumentError(f"fps must be positive, got {self.fps}")
        data = np.clip(data, 0.0, 1.0)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> list[np.ndarray]:
        return list(self.data)

    def replace(self, data=None, fps=None, id=None) -> "VideoClip":
        return VideoClip(
            self.data if data is None else data,
            self.fps if fps is None else fps,
            self.id if id is None else id,
        )


def _check_rgb(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim < 1 or pixels.shape[-1] != 3:
        raise InvalidFormatError(f"expected 3 channels, got shape {pixels.shape}")
    return pixels


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone RGB to HSV, all components in [0, 1] and hue in [0, 1)."""
    rgb = _check_rgb(rgb)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r,
        ((g - b) / safe_c) % 6.0,
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(c > 0, h / 6.0, 0.0) % 1.0
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    hsv = _check_rgb(hsv)
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    h6 = h * 6.0
    sector = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    conds = [sector == i for i in range(6)]
    out = np.stack(
        [np.select(conds, choices_r), np.select(conds, choices_g), np.select(conds, choices_b)],
        axis=-1,
    )
    return np.clip(out, 0.0, 1.0)


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma, dropping the channel axis."""
    rgb = _check_rgb(rgb)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def _keys_cubic(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    # pixel-center alignment; taps beyond the border are clamped onto the edge
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(pos)
    frac = pos - base
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for off in (-1, 0, 1, 2):
        idx = np.clip(base + off, 0, n_in - 1).astype(int)
        np.add.at(mat, (rows, idx), _keys_cubic(frac - off))
    return mat


def resample_bicubic(pixels: np.ndarray, new_width: int, new_height: int) -> np.ndarray:
    """Catmull-Rom resampling of the two spatial axes preceding the channel axis."""
    pixels = _check_rgb(pixels)
    if new_width < 1 or new_height < 1:
        raise InvalidArgumentError(f"target size must be >= 1, got {new_width}x{new_height}")
    h, w = pixels.shape[-3], pixels.shape[-2]
    out = pixels
    if new_height != h:
        out = np.einsum("oh,...hwc->...owc", _bicubic_matrix(h, new_height), out)
    if new_width != w:
        out = np.einsum("pw,...hwc->...hpc", _bicubic_matrix(w, new_width), out)
    return np.clip(out, 0.0, 1.0)


def _spatial_kernel(kernel: np.ndarray, ndim: int) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise InvalidArgumentError("kernel must be a square 2-D grid")
    if kernel.shape[0] % 2 == 0:
        raise InvalidArgumentError(f"kernel side must be odd, got {kernel.shape[0]}")
    return kernel.reshape((1,) * (ndim - 3) + kernel.shape + (1,))


def convolve_raw(pixels: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel clamp-to-edge convolution without clamping the result."""
    pixels = _check_rgb(pixels)
    return ndimage.convolve(pixels, _spatial_kernel(kernel, pixels.ndim), mode="nearest")


def convolve2d(pixels: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return np.clip(convolve_raw(pixels, kernel), 0.0, 1.0)


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    if radius is None:
        radius = max(1, int(np.ceil(3.0 * sigma)))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def quantize8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_clip(clip: VideoClip, path) -> Path:
    """Write ``clip`` as a manifest plus binary PPM frames."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(quantize8(clip.data)):
        name = f"{i:06d}.ppm"
        Image.fromarray(frame, mode="RGB").save(path / name, format="PPM")
        names.append(name)
    manifest = {"id": clip.id, "fps": clip.fps, "frames": names}
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_clip(path) -> VideoClip:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingManifestError(f"no {MANIFEST_NAME} in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        names = list(manifest["frames"])
        fps = float(manifest["fps"])
        clip_id = str(manifest.get("id", path.name))
    except (ValueError, KeyError, TypeError) as exc:
        raise MissingManifestError(f"unreadable manifest {manifest_path}: {exc}") from exc
    if not names:
        raise EmptyClipError(f"{path} lists no frames")

    frames = []
    for name in names:
        try:
            with Image.open(path / name) as im:
                im.load()
                arr = np.asarray(im.convert("RGB"))
        except (OSError, UnidentifiedImageError) as exc:
            raise CorruptFrameError(f"cannot decode frame {path / name}: {exc}") from exc
        if frames and arr.shape != frames[0].shape:
            raise InconsistentFrameSizeError(
                f"frame {name} is {arr.shape[1]}x{arr.shape[0]}, expected "
                f"{frames[0].shape[1]}x{frames[0].shape[0]}"
            )
        frames.append(arr)
    return VideoClip(np.stack(frames).astype(np.float64) / 255.0, fps, clip_id)
