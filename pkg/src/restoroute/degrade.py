"""Synthetic degradations, mixed composition and labelled dataset generation."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft, ndimage
from scipy.special import ndtri

from .errors import InvalidArgumentError
from .media import (
    VideoClip,
    convolve_raw,
    gaussian_kernel,
    hsv_to_rgb,
    load_clip,
    resample_bicubic,
    rgb_to_hsv,
    save_clip,
)

UINT64 = 2**64


class DegradationKind(str, enum.Enum):
    NOISE = "noise"
    BLUR = "blur"
    COMPRESSION = "compression"
    LOW_LIGHT = "low_light"
    RAIN = "rain"
    HAZE = "haze"
    LOW_RES = "low_res"
    LOW_FPS = "low_fps"

    @property
    def index(self) -> int:
        return _KIND_INDEX[self]

    def __str__(self):
        return self.value


_KIND_INDEX = {k: i for i, k in enumerate(DegradationKind)}
ALL_KINDS: tuple[DegradationKind, ...] = tuple(DegradationKind)


class Severity(enum.IntEnum):
    NONE = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text) -> "Severity":
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        try:
            return cls[str(text).upper()]
        except KeyError:
            raise InvalidArgumentError(f"unknown severity {text!r}") from None

    def __str__(self):
        return self.label


def parse_kind(text) -> DegradationKind:
    if isinstance(text, DegradationKind):
        return text
    try:
        return DegradationKind(str(text).lower().replace("-", "_"))
    except ValueError:
        raise InvalidArgumentError(f"unknown degradation kind {text!r}") from None


# Per-severity defaults, indexed [low, medium, high].
SEVERITY_TABLE = {
    DegradationKind.NOISE: {"sigma": (0.02, 0.05, 0.10), "photons": (512, 128, 32)},
    DegradationKind.BLUR: {"sigma": (1.0, 2.0, 3.5), "radius": (2, 4, 7)},
    DegradationKind.COMPRESSION: {"quant_scale": (2, 4, 8)},
    DegradationKind.LOW_LIGHT: {"gain": (0.6, 0.4, 0.25)},
    DegradationKind.RAIN: {"density": (0.002, 0.006, 0.015), "length": (9, 15, 21)},
    DegradationKind.HAZE: {"beta_dmax": (0.8, 1.5, 2.5)},
    DegradationKind.LOW_RES: {"factor": (2, 3, 4)},
    DegradationKind.LOW_FPS: {"k": (2, 4, 8)},
}

_FIXED_DEFAULTS = {
    DegradationKind.NOISE: {"model": "gaussian"},
    DegradationKind.BLUR: {"kernel": "gaussian"},
    DegradationKind.LOW_LIGHT: {"noise_sigma": 0.005},
    DegradationKind.RAIN: {"angle": 75.0, "amplitude": 0.55},
    DegradationKind.HAZE: {"airlight": 0.9, "depth_near": 0.3},
}


def default_params(kind: DegradationKind, severity: Severity, **overrides) -> dict:
    if severity == Severity.NONE:
        raise InvalidArgumentError("severity None has no parameters")
    params = dict(_FIXED_DEFAULTS.get(kind, {}))
    for name, levels in SEVERITY_TABLE[kind].items():
        params[name] = levels[int(severity) - 1]
    if kind == DegradationKind.NOISE and overrides.get("model") == "poisson":
        params.pop("sigma")
    elif kind == DegradationKind.NOISE:
        params.pop("photons")
    if kind == DegradationKind.BLUR and overrides.get("kernel") == "disc":
        params.pop("sigma")
    elif kind == DegradationKind.BLUR:
        params.pop("radius")
    params.update(overrides)
    return params


def _validate_params(kind: DegradationKind, p: dict) -> None:
    def need(cond, what):
        if not cond:
            raise InvalidArgumentError(f"{kind.value}: illegal parameter {what} in {p}")

    if kind == DegradationKind.NOISE:
        need(p.get("model") in ("gaussian", "poisson"), "model")
        if p["model"] == "gaussian":
            need(0 < p.get("sigma", -1) <= 1, "sigma")
        else:
            need(p.get("photons", 0) > 0, "photons")
    elif kind == DegradationKind.BLUR:
        need(p.get("kernel") in ("gaussian", "disc"), "kernel")
        if p["kernel"] == "gaussian":
            need(0 < p.get("sigma", -1) <= 20, "sigma")
        else:
            need(0 < p.get("radius", -1) <= 40, "radius")
    elif kind == DegradationKind.COMPRESSION:
        need(p.get("quant_scale", 0) > 0, "quant_scale")
    elif kind == DegradationKind.LOW_LIGHT:
        need(0 < p.get("gain", -1) < 1, "gain")
        need(p.get("noise_sigma", -1) >= 0, "noise_sigma")
    elif kind == DegradationKind.RAIN:
        need(0 < p.get("density", -1) < 1, "density")
        need(int(p.get("length", 0)) >= 1, "length")
        need(0 < p.get("amplitude", -1) <= 1, "amplitude")
    elif kind == DegradationKind.HAZE:
        need(p.get("beta_dmax", -1) > 0, "beta_dmax")
        need(0 < p.get("airlight", -1) <= 1, "airlight")
        need(0 <= p.get("depth_near", -1) < 1, "depth_near")
    elif kind == DegradationKind.LOW_RES:
        need(p.get("factor", 0) >= 1, "factor")
    elif kind == DegradationKind.LOW_FPS:
        need(isinstance(p.get("k"), (int, np.integer)) and p["k"] >= 2, "k")


@dataclass(frozen=True)
class DegradationSpec:
    kind: DegradationKind
    severity: Severity
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        object.__setattr__(self, "severity", Severity.parse(self.severity))
        if self.severity == Severity.NONE:
            raise InvalidArgumentError("a degradation spec needs severity above None")
        params = default_params(self.kind, self.severity, **self.params)
        _validate_params(self.kind, params)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "seed", int(self.seed) % UINT64)

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "severity": self.severity.label,
            "params": dict(self.params),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DegradationSpec":
        return cls(parse_kind(obj["kind"]), Severity.parse(obj["severity"]), obj.get("params", {}), obj.get("seed", 0))


@dataclass(frozen=True)
class GroundTruthLabel:
    clip_id: str
    specs: tuple
    gt_clip_id: str

    def __post_init__(self):
        specs = tuple(self.specs)
        if not 1 <= len(specs) <= 3:
            raise InvalidArgumentError("a label lists 1 to 3 degradations")
        if len({s.kind for s in specs}) != len(specs):
            raise InvalidArgumentError("label kinds must be distinct")
        object.__setattr__(self, "specs", specs)

    @property
    def kinds(self) -> frozenset:
        return frozenset(s.kind for s in self.specs)

    def severity_map(self) -> dict:
        return {s.kind: s.severity for s in self.specs}

    def to_json(self) -> dict:
        return {"clip": self.clip_id, "gt": self.gt_clip_id, "specs": [s.to_json() for s in self.specs]}

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruthLabel":
        return cls(obj["clip"], tuple(DegradationSpec.from_json(s) for s in obj["specs"]), obj["gt"])


def frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng((seed + index) % UINT64)


# ---------------------------------------------------------------------------
# per-kind recipes


def _add_noise(data, p, seed):
    out = np.empty_like(data)
    for i, frame in enumerate(data):
        rng = frame_rng(seed, i)
        if p["model"] == "gaussian":
            out[i] = frame + rng.normal(0.0, p["sigma"], frame.shape)
        else:
            out[i] = rng.poisson(frame * p["photons"]) / p["photons"]
    return out


def disc_kernel(radius: float) -> np.ndarray:
    r = int(math.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k = (xx**2 + yy**2 <= radius**2).astype(np.float64)
    return k / k.sum()


def _blur(data, p, seed):
    if p["kernel"] == "gaussian":
        kernel = gaussian_kernel(p["sigma"])
    else:
        kernel = disc_kernel(p["radius"])
    return convolve_raw(data, kernel)


JPEG_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
JPEG_CHROMA = np.full((8, 8), 99.0)
JPEG_CHROMA[:4, :4] = [[17, 18, 24, 47], [18, 21, 26, 66], [24, 26, 56, 99], [47, 66, 99, 99]]

_YCC = np.array([[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]])
_YCC_INV = np.linalg.inv(_YCC)


# tables laid out to broadcast over block coefficients of shape (T, By, 8, Bx, 8, 3)
QUANT_TABLES = np.stack([JPEG_LUMA, JPEG_CHROMA, JPEG_CHROMA], axis=-1)[:, None]


def ycc_planes(data: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Full-range YCbCr on the 0..255 scale, luma centred, edge-padded to whole 8x8 blocks."""
    t, h, w, _ = data.shape
    ycc = data @ _YCC.T * 255.0
    ycc[..., 0] -= 128.0
    return np.pad(ycc, ((0, 0), (0, -h % 8), (0, -w % 8), (0, 0)), mode="edge"), (h, w)


def rgb_from_planes(ycc: np.ndarray, size: tuple) -> np.ndarray:
    ycc = ycc[:, : size[0], : size[1]].copy()
    ycc[..., 0] += 128.0
    return (ycc / 255.0) @ _YCC_INV.T


def plane_dct(ycc: np.ndarray) -> np.ndarray:
    t, H, W, c = ycc.shape
    return fft.dctn(ycc.reshape(t, H // 8, 8, W // 8, 8, c), axes=(2, 4), norm="ortho")


def plane_idct(coeffs: np.ndarray) -> np.ndarray:
    t, by, _, bx, _, c = coeffs.shape
    return fft.idctn(coeffs, axes=(2, 4), norm="ortho").reshape(t, by * 8, bx * 8, c)


def block_dct(data: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Orthonormal 8x8 DCT of full-range YCbCr; coefficients are (T, By, 8, Bx, 8, 3)."""
    ycc, size = ycc_planes(data)
    return plane_dct(ycc), size


def inverse_block_dct(coeffs: np.ndarray, size: tuple) -> np.ndarray:
    return rgb_from_planes(plane_idct(coeffs), size)


def block_dct_quantize(data: np.ndarray, quant_scale: float) -> np.ndarray:
    """JPEG-style 8x8 DCT quantisation in full-range YCbCr."""
    coeffs, size = block_dct(data)
    tables = QUANT_TABLES * quant_scale
    return inverse_block_dct(np.round(coeffs / tables) * tables, size)


def _compress(data, p, seed):
    return block_dct_quantize(data, p["quant_scale"])


def _low_light(data, p, seed):
    hsv = rgb_to_hsv(data)
    v = hsv[..., 2] * p["gain"]
    if p["noise_sigma"] > 0:
        for i in range(len(v)):
            v[i] += frame_rng(seed, i).normal(0.0, p["noise_sigma"], v[i].shape)
    hsv[..., 2] = np.clip(v, 0.0, 1.0)
    return hsv_to_rgb(hsv)


def line_kernel(length: int, angle_deg: float) -> np.ndarray:
    """Anti-aliased line through the kernel centre, peak weight 1."""
    length = int(length)
    r = length // 2
    size = 2 * r + 1
    k = np.zeros((size, size))
    theta = math.radians(angle_deg)
    dx, dy = math.cos(theta), -math.sin(theta)
    for s in np.linspace(-r, r, 4 * size):
        x, y = r + s * dx, r + s * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for yy, xx, wgt in ((y0, x0, (1 - fx) * (1 - fy)), (y0, x0 + 1, fx * (1 - fy)),
                            (y0 + 1, x0, (1 - fx) * fy), (y0 + 1, x0 + 1, fx * fy)):
            if 0 <= yy < size and 0 <= xx < size:
                k[yy, xx] = max(k[yy, xx], wgt)
    return k


def rain_layer(shape, p, seed, index) -> np.ndarray:
    h, w = shape
    rng = frame_rng(seed, index)
    seeds = (rng.standard_normal((h, w)) > ndtri(1.0 - p["density"])).astype(np.float64)
    streaks = ndimage.convolve(seeds, line_kernel(p["length"], p["angle"]), mode="constant")
    return np.minimum(streaks, 1.0) * p["amplitude"]


def _rain(data, p, seed):
    out = np.empty_like(data)
    for i, frame in enumerate(data):
        out[i] = frame + rain_layer(frame.shape[:2], p, seed, i)[..., None]
    return out


def haze_transmission(height: int, p: dict) -> np.ndarray:
    # planar depth ramp: top row farthest (1), bottom row nearest (depth_near)
    ramp = np.linspace(1.0, p["depth_near"], height)
    return np.exp(-p["beta_dmax"] * ramp)[:, None]


def _haze(data, p, seed):
    t = haze_transmission(data.shape[1], p)[..., None]
    return data * t + p["airlight"] * (1.0 - t)


def _low_res(data, p, seed):
    h, w = data.shape[1], data.shape[2]
    nw, nh = int(w // p["factor"]), int(h // p["factor"])
    if nw < 1 or nh < 1:
        raise InvalidArgumentError(f"low_res factor {p['factor']} collapses a {w}x{h} frame")
    return resample_bicubic(data, nw, nh)


_RECIPES = {
    DegradationKind.NOISE: _add_noise,
    DegradationKind.BLUR: _blur,
    DegradationKind.COMPRESSION: _compress,
    DegradationKind.LOW_LIGHT: _low_light,
    DegradationKind.RAIN: _rain,
    DegradationKind.HAZE: _haze,
    DegradationKind.LOW_RES: _low_res,
}


def apply_degradation(clip: VideoClip, spec: DegradationSpec) -> VideoClip:
    """Apply one degradation; deterministic in ``(clip, spec)``."""
    if spec.kind == DegradationKind.LOW_FPS:
        k = spec.params["k"]
        if k >= len(clip):
            raise InvalidArgumentError(f"low_fps k={k} leaves nothing of a {len(clip)}-frame clip")
        return clip.replace(data=clip.data[::k], fps=clip.fps / k)
    data = np.array(clip.data)
    return clip.replace(data=_RECIPES[spec.kind](data, spec.params, spec.seed))


_ORDER_GROUP = {
    DegradationKind.RAIN: 0,
    DegradationKind.HAZE: 0,
    DegradationKind.LOW_LIGHT: 0,
    DegradationKind.BLUR: 1,
    DegradationKind.NOISE: 2,
    DegradationKind.LOW_RES: 3,
    DegradationKind.LOW_FPS: 3,
    DegradationKind.COMPRESSION: 4,
}


def canonical_mixed_order(kinds) -> list:
    """Physical acquisition order: scene, optics, sensor, sampling, codec."""
    kinds = {parse_kind(k) for k in kinds}
    if not 1 <= len(kinds) <= 3:
        raise InvalidArgumentError(f"mixed degradations take 1 to 3 kinds, got {len(kinds)}")
    return sorted(kinds, key=lambda k: (_ORDER_GROUP[k], k.index))


def compose_mixed(clip: VideoClip, specs, clip_id: str | None = None):
    specs = list(specs)
    if not 1 <= len(specs) <= 3:
        raise InvalidArgumentError("compose takes 1 to 3 specs")
    by_kind = {s.kind: s for s in specs}
    if len(by_kind) != len(specs):
        raise InvalidArgumentError("duplicate degradation kinds")
    ordered = [by_kind[k] for k in canonical_mixed_order(by_kind)]
    out = clip
    for spec in ordered:
        out = apply_degradation(out, spec)
    out = out.replace(id=clip_id or f"{clip.id}-deg")
    return out, GroundTruthLabel(out.id, tuple(ordered), clip.id)


# ---------------------------------------------------------------------------
# dataset generation


@dataclass
class DatasetManifest:
    """Index of a generated dataset directory (``dataset.json``)."""

    root: Path
    gt: list = field(default_factory=list)
    clips: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    master_seed: int = 0

    FILENAME = "dataset.json"

    def to_json(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "gt": self.gt,
            "clips": self.clips,
            "labels": [lab.to_json() for lab in self.labels],
        }

    def save(self) -> Path:
        path = Path(self.root) / self.FILENAME
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / cls.FILENAME
        obj = json.loads(path.read_text())
        return cls(
            path.parent,
            obj["gt"],
            obj["clips"],
            [GroundTruthLabel.from_json(x) for x in obj["labels"]],
            obj.get("master_seed", 0),
        )

    def label_for(self, clip_id: str) -> GroundTruthLabel:
        for lab in self.labels:
            if lab.clip_id == clip_id:
                return lab
        raise KeyError(clip_id)

    def gt_entry(self, gt_id: str) -> dict:
        for entry in self.gt:
            if entry["id"] == gt_id:
                return entry
        raise KeyError(gt_id)

    def load_clip(self, clip_id: str) -> VideoClip:
        for entry in self.clips + self.gt:
            if entry["id"] == clip_id:
                return load_clip(Path(self.root) / entry["path"])
        raise KeyError(clip_id)


def _parse_recipe(recipe) -> dict:
    out = {}
    for arity, count in dict(recipe).items():
        a = int(str(arity).rstrip("x×"))
        if a not in (1, 2, 3) or int(count) < 0:
            raise InvalidArgumentError(f"bad recipe entry {arity!r}: {count!r}")
        out[a] = int(count)
    if not any(out.values()):
        raise InvalidArgumentError("recipe produces no clips")
    return out


DEFAULT_RECIPE = {1: 8, 2: 4, 3: 2}


def random_specs(rng: np.random.Generator, arity: int, first_kind: DegradationKind | None = None,
                 n_frames: int | None = None) -> list:
    kinds = list(ALL_KINDS)
    if n_frames is not None and n_frames <= 2:
        kinds.remove(DegradationKind.LOW_FPS)
    if first_kind is not None:
        rest = [k for k in kinds if k != first_kind]
        chosen = [first_kind] + [rest[i] for i in rng.choice(len(rest), arity - 1, replace=False)]
    else:
        chosen = [kinds[i] for i in rng.choice(len(kinds), arity, replace=False)]
    specs = []
    for kind in chosen:
        sev = Severity(int(rng.integers(1, 4)))
        if kind == DegradationKind.LOW_FPS and n_frames is not None:
            while SEVERITY_TABLE[kind]["k"][sev - 1] >= n_frames:
                sev = Severity(sev - 1)
        specs.append(DegradationSpec(kind, sev, {}, int(rng.integers(0, 2**63))))
    return specs


def generate_dataset(gt_clips, out_dir, recipe=None, master_seed: int = 0) -> DatasetManifest:
    """Degrade every ground-truth clip per ``recipe`` and write clips plus labels.

    ``recipe`` maps degradation arity (1, 2, 3) to the number of degraded
    clips generated per ground-truth clip.  Single-degradation clips cycle
    through the kinds so small recipes still cover the whole space.
    """
    gt_clips = list(gt_clips)
    if not gt_clips:
        raise InvalidArgumentError("need at least one ground-truth clip")
    recipe = _parse_recipe(DEFAULT_RECIPE if recipe is None else recipe)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(master_seed)
    manifest = DatasetManifest(out_dir, master_seed=int(master_seed))
    kind_offset = int(rng.integers(len(ALL_KINDS)))

    for g, gt in enumerate(gt_clips):
        gt_path = f"gt/{gt.id}"
        save_clip(gt, out_dir / gt_path)
        manifest.gt.append(
            {"id": gt.id, "path": gt_path, "width": gt.width, "height": gt.height,
             "fps": gt.fps, "frames": len(gt)}
        )
        serial = 0
        for arity in (1, 2, 3):
            for _ in range(recipe.get(arity, 0)):
                first = None
                if arity == 1:
                    first = ALL_KINDS[(kind_offset + g + serial) % len(ALL_KINDS)]
                    if first == DegradationKind.LOW_FPS and len(gt) <= 2:
                        first = DegradationKind.NOISE
                specs = random_specs(rng, arity, first, len(gt))
                clip_id = f"{gt.id}-d{serial:03d}"
                degraded, label = compose_mixed(gt, specs, clip_id)
                clip_path = f"clips/{clip_id}"
                save_clip(degraded, out_dir / clip_path)
                manifest.clips.append({"id": clip_id, "path": clip_path, "gt": gt.id})
                manifest.labels.append(label)
                serial += 1
    manifest.save()
    return manifest
