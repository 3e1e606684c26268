"""Restoration tools: classical operators behind one clip-to-clip interface."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from .context import ClipContext
from .degrade import (
    ALL_KINDS,
    QUANT_TABLES,
    DegradationKind,
    line_kernel,
    parse_kind,
    plane_dct,
    plane_idct,
    rgb_from_planes,
    ycc_planes,
)
from .errors import ConfigurationError, InvalidArgumentError
from .identify import RAIN_ANGLES, dark_channel
from .media import VideoClip, hsv_to_rgb, resample_bicubic, rgb_to_hsv, rgb_to_luma

K = DegradationKind
MAX_TOOLS_PER_KIND = 4


def _spatial(sigma):
    return (0, sigma, sigma, 0)


def _gauss(data, sigma):
    return ndimage.gaussian_filter(data, _spatial(sigma), mode="nearest")


def bilateral(data: np.ndarray, radius: int = 2, sigma_s: float = 1.5, sigma_r: float = 0.1) -> np.ndarray:
    """Brute-force bilateral filter over a (2r+1)^2 window, colour distance on RGB."""
    pad = np.pad(data, ((0, 0), (radius, radius), (radius, radius), (0, 0)), mode="edge")
    h, w = data.shape[1], data.shape[2]
    acc = np.zeros_like(data)
    norm = np.zeros(data.shape[:3])
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = pad[:, radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            dist2 = ((shifted - data) ** 2).sum(axis=-1)
            wgt = np.exp(-(dy * dy + dx * dx) / (2 * sigma_s**2) - dist2 / (2 * sigma_r**2))
            acc += wgt[..., None] * shifted
            norm += wgt
    return acc / norm[..., None]


# --- noise -----------------------------------------------------------------


def gaussian_filter_tool(clip, ctx, sigma=1.0):
    return clip.replace(data=_gauss(clip.data, sigma))


def median_filter_tool(clip, ctx, size=3):
    return clip.replace(data=ndimage.median_filter(clip.data, size=(1, size, size, 1), mode="nearest"))


def bilateral_filter_tool(clip, ctx, radius=2, sigma_s=1.5, sigma_r=0.1):
    return clip.replace(data=bilateral(clip.data, radius, sigma_s, sigma_r))


# --- blur ------------------------------------------------------------------


def unsharp_mask_tool(clip, ctx, sigma=1.5, amount=1.0):
    data = clip.data
    return clip.replace(data=data + amount * (data - _gauss(data, sigma)))


def richardson_lucy_tool(clip, ctx, iterations=5, psf_sigma=2.0):
    observed = np.maximum(clip.data, 1e-4)
    estimate = observed.copy()
    for _ in range(iterations):
        reblurred = _gauss(estimate, psf_sigma)
        estimate = estimate * _gauss(observed / np.maximum(reblurred, 1e-6), psf_sigma)
    return clip.replace(data=estimate)


# --- compression -----------------------------------------------------------

_RAMP = np.array([0.875, 0.625, 0.375, 0.125])


def _smooth_boundaries(data: np.ndarray, axis: int, max_step: float) -> np.ndarray:
    out = np.moveaxis(data.copy(), axis, -1)
    n = out.shape[-1]
    for edge in range(8, n, 8):
        p0, q0 = out[..., edge - 1], out[..., edge]
        step = q0 - p0
        step = np.where(np.abs(step) < max_step, step, 0.0) / 2.0
        for d, wgt in enumerate(_RAMP):
            if edge - 1 - d >= 0:
                out[..., edge - 1 - d] += wgt * step
            if edge + d < n:
                out[..., edge + d] -= wgt * step
    return np.moveaxis(out, -1, axis)


def block_smoother_tool(clip, ctx, max_step=0.12):
    """Spread each small 8-aligned step linearly over four pixels per side."""
    data = np.moveaxis(clip.data, -1, 1)  # (T, 3, H, W)
    data = _smooth_boundaries(data, -1, max_step)
    data = _smooth_boundaries(data, -2, max_step)
    return clip.replace(data=np.moveaxis(data, 1, -1))


def _boundary_weight(n: int) -> np.ndarray:
    dist = np.minimum(np.arange(n) % 8, 7 - np.arange(n) % 8)
    return np.select([dist == 0, dist == 1], [1.0, 0.5], 0.0)


def bilateral_deblock_tool(clip, ctx, radius=3, sigma_s=2.0, sigma_r=0.06):
    """Bilateral smoothing confined to the pixels flanking block boundaries."""
    smooth = bilateral(clip.data, radius, sigma_s, sigma_r)
    wy = _boundary_weight(clip.height)[:, None]
    wx = _boundary_weight(clip.width)[None, :]
    wgt = np.maximum(wy, wx)[None, :, :, None]
    return clip.replace(data=wgt * smooth + (1.0 - wgt) * clip.data)


def estimate_quant_scale(coeffs, scales=np.arange(0.5, 16.01, 0.25), tol=0.1, fit=0.9, min_count=100):
    """Largest table scale whose lattice holds the non-zero block-DCT coefficients, or None."""
    table = np.broadcast_to(QUANT_TABLES, coeffs.shape)
    live = np.abs(coeffs) > 0.5 * table * scales[0]
    coeffs, table = coeffs[live], table[live]
    fits = []
    for s in scales:
        rel = coeffs / (table * s)
        rel = rel[np.abs(rel) > 0.5]
        if rel.size < min_count:
            break
        resid = np.abs(rel - np.round(rel))
        if np.mean(resid < tol) >= fit:
            fits.append((float(s), float(resid.mean())))
    if not fits:
        return None
    floor = min(r for _, r in fits)
    # neighbours of the true scale also fit when most coefficients are one step; their residual is larger
    return max(s for s, r in fits if r <= floor + 0.02)


def dct_constraint_deblock_tool(clip, ctx, iterations=4, sigma=0.6):
    """Alternate light smoothing with projection onto the observed quantisation cells.

    Works in the YCbCr block plane. Without a detectable quantisation lattice the clip is returned unchanged.
    """
    ycc, size = ycc_planes(clip.data)
    coeffs = plane_dct(ycc)
    scale = estimate_quant_scale(coeffs)
    if scale is None:
        return clip
    half = QUANT_TABLES * scale / 2.0
    lo, hi = coeffs - half, coeffs + half
    for _ in range(iterations):
        ycc = plane_idct(np.clip(plane_dct(_gauss(ycc, sigma)), lo, hi))
    return clip.replace(data=rgb_from_planes(ycc, size))


# --- low light -------------------------------------------------------------


def gamma_lift_tool(clip, ctx, target=0.6):
    hsv = rgb_to_hsv(clip.data)
    mean_v = float(np.clip(hsv[..., 2].mean(), 1e-3, 0.999))
    gamma = float(np.clip(np.log(target) / np.log(mean_v), 0.2, 1.0))
    hsv[..., 2] = hsv[..., 2] ** gamma
    return clip.replace(data=hsv_to_rgb(hsv))


def v_gain_denoise_tool(clip, ctx, target=0.6, sigma=0.7):
    hsv = rgb_to_hsv(clip.data)
    gain = max(1.0, target / max(float(hsv[..., 2].mean()), 1e-3))
    hsv[..., 2] = np.clip(hsv[..., 2] * gain, 0.0, 1.0)
    return clip.replace(data=_gauss(hsv_to_rgb(hsv), sigma))


# --- rain ------------------------------------------------------------------


def temporal_median_tool(clip, ctx, window=3):
    n = len(clip)
    half = window // 2
    idx = np.clip(np.arange(n)[:, None] + np.arange(-half, half + 1)[None, :], 0, n - 1)
    return clip.replace(data=np.median(clip.data[idx], axis=1))


def directional_notch_tool(clip, ctx, length=9, level=0.03):
    """Replace pixels on bright streaks of the dominant orientation by a spatial median."""
    data = clip.data
    luma = rgb_to_luma(data)
    bright = np.maximum(luma - ndimage.median_filter(luma, size=(1, 5, 5), mode="nearest"), 0.0)
    best, best_energy = RAIN_ANGLES[0], -1.0
    for angle in RAIN_ANGLES:
        k = line_kernel(length, angle)
        e = np.mean(ndimage.convolve(bright[::4], (k / k.sum())[None], mode="nearest") ** 2)
        if e > best_energy:
            best, best_energy = angle, e
    k = line_kernel(length, best)
    response = ndimage.convolve(bright, (k / k.sum())[None], mode="nearest")
    mask = ndimage.binary_dilation(response > level, structure=np.ones((1, 3, 3), bool))
    fill = ndimage.median_filter(data, size=(1, 7, 7, 1), mode="nearest")
    return clip.replace(data=np.where(mask[..., None], fill, data))


# --- haze ------------------------------------------------------------------


def guided_filter(guide: np.ndarray, src: np.ndarray, radius: int, eps: float) -> np.ndarray:
    size = (1, 2 * radius + 1, 2 * radius + 1)

    def box(x):
        return ndimage.uniform_filter(x, size=size, mode="nearest")

    mean_i, mean_p = box(guide), box(src)
    cov_ip = box(guide * src) - mean_i * mean_p
    var_i = box(guide * guide) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return box(a) * guide + box(b)


def dark_channel_dehaze_tool(clip, ctx, patch=7, omega=0.95, t_min=0.1, top=0.001):
    data = clip.data
    dark = dark_channel(data, patch)
    flat_dark = dark.reshape(-1)
    k = max(1, int(top * flat_dark.size))
    brightest = np.argpartition(flat_dark, flat_dark.size - k)[-k:]
    airlight = data.reshape(-1, 3)[brightest].mean(axis=0)
    airlight = np.maximum(airlight, 0.05)
    trans = 1.0 - omega * dark_channel(data / airlight, patch)
    trans = guided_filter(rgb_to_luma(data), trans, radius=15, eps=1e-3)
    trans = np.maximum(trans, t_min)[..., None]
    return clip.replace(data=(data - airlight) / trans + airlight)


def contrast_stretch_tool(clip, ctx, low=1.0, high=99.0):
    data = clip.data
    lo = np.percentile(data, low, axis=(0, 1, 2))
    hi = np.percentile(data, high, axis=(0, 1, 2))
    return clip.replace(data=(data - lo) / np.maximum(hi - lo, 1e-3))


# --- geometry --------------------------------------------------------------


def _need_geometry(ctx: ClipContext | None) -> ClipContext:
    if ctx is None or not ctx.has_geometry:
        raise InvalidArgumentError("resolution tools need the nominal size in the context")
    return ctx


def bicubic_upsample_tool(clip, ctx):
    ctx = _need_geometry(ctx)
    return clip.replace(data=resample_bicubic(clip.data, ctx.nominal_width, ctx.nominal_height))


def bicubic_unsharp_tool(clip, ctx, sigma=1.0, amount=0.6):
    return unsharp_mask_tool(bicubic_upsample_tool(clip, ctx), ctx, sigma, amount)


def _rate_factor(clip, ctx) -> int:
    if ctx is None or not ctx.nominal_fps:
        raise InvalidArgumentError("frame-rate tools need the nominal fps in the context")
    return max(1, int(round(ctx.nominal_fps / clip.fps)))


def frame_blend_tool(clip, ctx):
    """Insert k-1 linear blends between neighbours, then hold the last frame to n*k."""
    k = _rate_factor(clip, ctx)
    data = clip.data
    n = len(data)
    frames = []
    for i in range(n - 1):
        for j in range(k):
            a = j / k
            frames.append((1.0 - a) * data[i] + a * data[i + 1])
    frames.extend([data[-1]] * (n * k - len(frames)))
    return clip.replace(data=np.stack(frames), fps=clip.fps * k)


def frame_repeat_tool(clip, ctx):
    k = _rate_factor(clip, ctx)
    return clip.replace(data=np.repeat(clip.data, k, axis=0), fps=clip.fps * k)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tool:
    name: str
    targets: DegradationKind
    transform: Callable
    cost_hint: float = 1.0
    params: dict = field(default_factory=dict)

    def __call__(self, clip: VideoClip, context: ClipContext | None = None) -> VideoClip:
        return self.transform(clip, context, **self.params)

    def with_params(self, **overrides) -> "Tool":
        return Tool(self.name, self.targets, self.transform, self.cost_hint, {**self.params, **overrides})


# cost_hint: relative per-frame cost measured at 320x180, gaussian filter = 1
_DEFAULT_TOOLS = [
    (K.NOISE, "gaussian-filter", gaussian_filter_tool, 1.0),
    (K.NOISE, "median-filter", median_filter_tool, 6.0),
    (K.NOISE, "bilateral-filter", bilateral_filter_tool, 14.0),
    (K.BLUR, "unsharp-mask", unsharp_mask_tool, 1.5),
    (K.BLUR, "richardson-lucy", richardson_lucy_tool, 12.0),
    (K.COMPRESSION, "block-boundary-smoother", block_smoother_tool, 1.0),
    (K.COMPRESSION, "bilateral-deblock", bilateral_deblock_tool, 25.0),
    (K.COMPRESSION, "dct-constraint-deblock", dct_constraint_deblock_tool, 8.0),
    (K.LOW_LIGHT, "gamma-lift", gamma_lift_tool, 2.0),
    (K.LOW_LIGHT, "v-channel-gain+denoise", v_gain_denoise_tool, 3.0),
    (K.RAIN, "temporal-median", temporal_median_tool, 2.0),
    (K.RAIN, "directional-notch", directional_notch_tool, 10.0),
    (K.HAZE, "dark-channel-dehaze", dark_channel_dehaze_tool, 6.0),
    (K.HAZE, "contrast-stretch", contrast_stretch_tool, 2.0),
    (K.LOW_RES, "bicubic-upsample", bicubic_upsample_tool, 2.0),
    (K.LOW_RES, "bicubic+unsharp", bicubic_unsharp_tool, 3.5),
    (K.LOW_FPS, "frame-blend-interp", frame_blend_tool, 0.5),
    (K.LOW_FPS, "frame-repeat", frame_repeat_tool, 0.1),
]


class Toolbox:
    """Kind-indexed tool registry with a run-scoped invocation tally."""

    def __init__(self, tools):
        self.tools: dict = {k: [] for k in ALL_KINDS}
        names = set()
        for tool in tools:
            if tool.name in names:
                raise ConfigurationError(f"duplicate tool name {tool.name!r}")
            names.add(tool.name)
            self.tools[tool.targets].append(tool)
        for kind, lst in self.tools.items():
            if not 1 <= len(lst) <= MAX_TOOLS_PER_KIND:
                raise ConfigurationError(f"{kind.value} needs 1 to {MAX_TOOLS_PER_KIND} tools, has {len(lst)}")
        self._lock = threading.Lock()
        self.invocations = 0

    def __getitem__(self, kind) -> list:
        return list(self.tools[parse_kind(kind)])

    def tool(self, name: str) -> Tool:
        for lst in self.tools.values():
            for t in lst:
                if t.name == name:
                    return t
        raise KeyError(name)

    def all_tools(self) -> list:
        return [t for k in ALL_KINDS for t in self.tools[k]]

    def apply_tool(self, tool: Tool, clip: VideoClip, context: ClipContext | None = None) -> VideoClip:
        if self.tools[tool.targets].count(tool) == 0:
            raise InvalidArgumentError(f"tool {tool.name!r} is not registered")
        out = tool(clip, context)
        with self._lock:
            self.invocations += 1
        return out

    def reset_counter(self) -> None:
        with self._lock:
            self.invocations = 0


def default_toolbox(config: dict | None = None) -> Toolbox:
    """The shipped registry, optionally filtered/overridden by a config mapping.

    Config keys: ``disable`` (list of tool names) and ``params``
    (tool name -> parameter overrides).
    """
    tools = [Tool(name, kind, fn, cost) for kind, name, fn, cost in _DEFAULT_TOOLS]
    if config:
        known = {t.name for t in tools}
        disable = set(config.get("disable", []))
        overrides = config.get("params", {})
        unknown = (disable | set(overrides)) - known
        if unknown:
            raise ConfigurationError(f"unknown tool names in config: {sorted(unknown)}")
        tools = [t.with_params(**overrides.get(t.name, {})) for t in tools if t.name not in disable]
    return Toolbox(tools)


def load_toolbox(path) -> Toolbox:
    try:
        config = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read toolbox config {path}: {exc}") from exc
    return default_toolbox(config)
