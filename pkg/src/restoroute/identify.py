"""Degradation identification: ground-truth oracle and statistical detector bank."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from .context import ClipContext
from .degrade import ALL_KINDS, DatasetManifest, DegradationKind, GroundTruthLabel, Severity, line_kernel, parse_kind
from .errors import CalibrationCoverageError, InvalidArgumentError
from .media import VideoClip, rgb_to_hsv, rgb_to_luma

log = logging.getLogger(__name__)

K = DegradationKind
MAX_SAMPLED_FRAMES = 16
RAIN_FRAMES = 8


@dataclass(frozen=True)
class DegradationProfile:
    severity: dict
    scores: dict = field(default_factory=dict)
    low_confidence: frozenset = frozenset()

    def __post_init__(self):
        sev = {k: Severity.NONE for k in ALL_KINDS}
        sev.update({parse_kind(k): Severity.parse(v) for k, v in self.severity.items()})
        object.__setattr__(self, "severity", sev)

    @property
    def active(self) -> frozenset:
        return frozenset(k for k, s in self.severity.items() if s > Severity.NONE)

    def to_json(self) -> dict:
        return {
            "severity": {k.value: self.severity[k].label for k in ALL_KINDS},
            "scores": {k.value: float(v) for k, v in self.scores.items()},
            "low_confidence": sorted(k.value for k in self.low_confidence),
        }


# ---------------------------------------------------------------------------
# detectors; every score grows with degradation strength


def sample_indices(n_frames: int, limit: int = MAX_SAMPLED_FRAMES) -> np.ndarray:
    return np.unique(np.round(np.linspace(0, n_frames - 1, min(n_frames, limit))).astype(int))


_LAPLACE_MASK = np.array([[1, -2, 1], [-2, 4, -2], [1, -2, 1]], dtype=np.float64)


def noise_score(luma: np.ndarray) -> float:
    """Robust sigma of the Laplacian residual (MAD estimator)."""
    vals = []
    for frame in luma:
        resp = ndimage.correlate(frame, _LAPLACE_MASK, mode="nearest")[1:-1, 1:-1]
        vals.append(np.median(np.abs(resp)) / 0.6745 / 6.0)
    return float(np.mean(vals))


def _edge_strength(luma: np.ndarray, top: float = 0.05) -> float:
    gy = np.diff(luma, axis=-2)[..., :, :-1]
    gx = np.diff(luma, axis=-1)[..., :-1, :]
    mag = np.hypot(gx, gy).ravel()
    k = max(1, int(top * mag.size))
    return float(np.partition(mag, mag.size - k)[-k:].mean())


def blur_score(luma: np.ndarray) -> float:
    """Share of the strongest edge gradients that survives a re-blur.

    A sharp step loses most of its peak slope when blurred again; an
    already-blurred one barely changes, so the ratio approaches 1.
    """
    reblurred = ndimage.gaussian_filter(luma, sigma=(0, 1.0, 1.0), mode="nearest")
    return _edge_strength(reblurred) / max(_edge_strength(luma), 1e-12)


def blockiness_score(luma: np.ndarray) -> float:
    """Excess luma step across 8-aligned block boundaries, in 8-bit units."""
    excess = []
    for axis in (-1, -2):
        d = np.abs(np.diff(luma, axis=axis))
        n = d.shape[axis]
        if n < 9:
            continue
        at_edge = (np.arange(n) % 8) == 7
        edge = np.compress(at_edge, d, axis=axis).mean()
        inner = np.compress(~at_edge, d, axis=axis).mean()
        excess.append(edge - inner)
    return float(np.mean(excess) * 255.0) if excess else 0.0


def darkness_score(rgb: np.ndarray) -> float:
    return float(1.0 - rgb.max(axis=-1).mean())


def dark_channel(rgb: np.ndarray, patch: int = 7) -> np.ndarray:
    size = (1,) * (rgb.ndim - 3) + (patch, patch)
    return ndimage.minimum_filter(rgb.min(axis=-1), size=size, mode="nearest")


def haze_score(rgb: np.ndarray) -> float:
    return float(dark_channel(rgb).mean())


def _unit_line(length: int, angle: float) -> np.ndarray:
    k = line_kernel(length, angle)
    return k / k.sum()


RAIN_ANGLES = tuple(range(0, 180, 15))


def rain_score(luma: np.ndarray) -> float:
    """Directional excess of the bright high-frequency band.

    Line-filter energy is measured at 12 orientations; isotropic content
    (noise, texture) raises every orientation alike, so the spread between
    the strongest and weakest orientation isolates streak-like structure.
    """
    bright = np.maximum(luma - ndimage.gaussian_filter(luma, (0, 1.5, 1.5), mode="nearest"), 0.0)
    energy = [
        np.mean(ndimage.convolve(bright, _unit_line(9, a)[None], mode="nearest") ** 2)
        for a in RAIN_ANGLES
    ]
    return float((max(energy) - min(energy)) * 1e4)


def spectral_rolloff_score(luma: np.ndarray) -> float:
    """Share of spectral energy missing above half-Nyquist, relative to a 1/f prior."""
    spec = np.abs(np.fft.rfft2(luma - luma.mean(axis=(-2, -1), keepdims=True))) ** 2
    fy = np.abs(np.fft.fftfreq(luma.shape[-2]))[:, None]
    fx = np.fft.rfftfreq(luma.shape[-1])[None, :]
    radius = np.sqrt(fx**2 + fy**2)
    high = spec[..., radius > 0.25].sum()
    total = spec.sum() + 1e-12
    return float(1.0 - min(1.0, 20.0 * high / total))


def burstiness_score(luma: np.ndarray) -> float:
    """Large, sparse inter-frame changes relative to typical change."""
    if len(luma) < 2:
        return 0.0
    diffs = np.abs(np.diff(luma, axis=0)).mean(axis=(-2, -1))
    return float(np.mean(diffs) * 100.0)


def _temporal_median(clip: VideoClip, idx: np.ndarray) -> np.ndarray:
    """Luma of the sampled frames after a 3-tap temporal median (suppresses rain transients)."""
    if len(clip) < 3:
        return rgb_to_luma(clip.data[idx])
    centers = np.clip(idx, 1, len(clip) - 2)
    triples = rgb_to_luma(clip.data[np.stack([centers - 1, centers, centers + 1], axis=1)])
    return np.median(triples, axis=1)


def detector_scores(clip: VideoClip, context: ClipContext | None = None):
    """Raw score per kind plus the set of kinds scored by a fallback proxy."""
    context = context or ClipContext()
    idx = sample_indices(len(clip))
    rgb = clip.data[idx]
    luma = rgb_to_luma(rgb)
    low_conf = set()
    scores = {
        K.NOISE: noise_score(_temporal_median(clip, idx)),
        K.BLUR: blur_score(luma),
        K.COMPRESSION: blockiness_score(luma),
        K.LOW_LIGHT: darkness_score(rgb),
        K.HAZE: haze_score(rgb),
    }

    scores[K.RAIN] = rain_score(luma[sample_indices(len(luma), RAIN_FRAMES)])

    if context.has_geometry:
        scores[K.LOW_RES] = max(context.nominal_width / clip.width, context.nominal_height / clip.height)
    else:
        scores[K.LOW_RES] = spectral_rolloff_score(luma)
        low_conf.add(K.LOW_RES)

    if context.nominal_fps:
        scores[K.LOW_FPS] = context.nominal_fps / clip.fps
    else:
        scores[K.LOW_FPS] = burstiness_score(rgb_to_luma(clip.data))
        low_conf.add(K.LOW_FPS)
    return scores, frozenset(low_conf)


# ---------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class ThresholdTable:
    """Per kind: three ascending cut points (low, medium, high) and a clean baseline."""

    cuts: dict
    baseline: dict

    def severity(self, kind: DegradationKind, score: float) -> Severity:
        return Severity(int(sum(score >= t for t in self.cuts[kind])))

    def level(self, kind: DegradationKind, score: float) -> float:
        """Continuous severity: 0 at the clean baseline, 1/2/3 at the cut points."""
        lo, mid, hi = self.cuts[kind]
        base = self.baseline[kind]
        if not base < lo:
            base = lo - max(mid - lo, 1e-9)
        xs = [base, lo, mid, hi]
        ys = [0.0, 1.0, 2.0, 3.0]
        if score >= hi:
            span = max(hi - mid, 1e-9)
            return 3.0 + (score - hi) / span
        return float(np.interp(score, xs, ys))

    def to_json(self) -> dict:
        return {
            k.value: {"cuts": [float(t) for t in self.cuts[k]], "baseline": float(self.baseline[k])}
            for k in ALL_KINDS
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ThresholdTable":
        cuts, base = {}, {}
        for name, entry in obj.items():
            kind = parse_kind(name)
            cuts[kind] = tuple(float(t) for t in entry["cuts"])
            base[kind] = float(entry["baseline"])
        missing = set(ALL_KINDS) - set(cuts)
        if missing:
            raise InvalidArgumentError(f"threshold table lacks {sorted(k.value for k in missing)}")
        return cls(cuts, base)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ThresholdTable":
        return cls.from_json(json.loads(Path(path).read_text()))


def default_thresholds() -> ThresholdTable:
    text = resources.files("restoroute.data").joinpath("thresholds.json").read_text()
    return ThresholdTable.from_json(json.loads(text))


def _best_cuts(scores: np.ndarray, classes: np.ndarray):
    """Three ordered cut points maximising 4-class accuracy.

    Cut positions ``a <= b <= c`` split the sorted scores into the four
    classes; cumulative class counts make each candidate O(1), and running
    prefix/suffix maxima reduce the search to one pass over ``b``.
    """
    order = np.lexsort((classes, scores))
    s, c = scores[order], classes[order]
    n = len(s)
    P = np.zeros((4, n + 1), dtype=np.int64)
    for k in range(4):
        P[k, 1:] = np.cumsum(c == k)
    valid = np.ones(n + 1, dtype=bool)
    valid[1:n] = s[1:] > s[:-1]

    left = np.where(valid, P[0] - P[1], -(10**9))
    left_best = np.maximum.accumulate(left)
    left_arg = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        left_arg[i] = i if left[i] > left_best[i - 1] else left_arg[i - 1]
    right = np.where(valid, P[2] - P[3], -(10**9))
    right_best = np.maximum.accumulate(right[::-1])[::-1]
    right_arg = np.zeros(n + 1, dtype=int)
    right_arg[n] = n
    for i in range(n - 1, -1, -1):
        right_arg[i] = i if right[i] >= right_best[i + 1] else right_arg[i + 1]

    total = np.where(valid, left_best + P[1] - P[2] + right_best, -(10**9))
    b = int(np.argmax(total))
    cuts = (int(left_arg[b]), b, int(right_arg[b]))
    correct = int(total[b] + P[3, n])

    span = float(s[-1] - s[0]) + 1.0

    def value(pos):
        if pos == 0:
            return float(s[0] - span)
        if pos == n:
            return float(s[-1] + span)
        return float((s[pos - 1] + s[pos]) / 2.0)

    return tuple(value(p) for p in cuts), correct


def manifest_samples(manifest) -> list:
    """Score every clip of a generated dataset, with clean ground truth as None samples."""
    out = []
    for entry in manifest.gt:
        ctx = ClipContext.from_gt_entry(entry)
        out.append((detector_scores(manifest.load_clip(entry["id"]), ctx)[0], {}))
    for entry, label in zip(manifest.clips, manifest.labels):
        ctx = ClipContext.from_gt_entry(manifest.gt_entry(label.gt_clip_id))
        out.append((detector_scores(manifest.load_clip(entry["id"]), ctx)[0], label.severity_map()))
    return out


def calibrate_thresholds(samples) -> ThresholdTable:
    """Fit per-kind cut points maximising 4-class accuracy.

    ``samples`` is a :class:`DatasetManifest` or ``(scores, true_severity_map)``
    pairs.  Raises :class:`CalibrationCoverageError` unless every kind
    appears at every non-None severity.
    """
    if isinstance(samples, DatasetManifest):
        samples = manifest_samples(samples)
    samples = list(samples)
    gaps = []
    for kind in ALL_KINDS:
        seen = {Severity.parse(truth.get(kind, Severity.NONE)) for _, truth in samples}
        for sev in (Severity.LOW, Severity.MEDIUM, Severity.HIGH):
            if sev not in seen:
                gaps.append((kind.value, sev.label))
    if gaps:
        raise CalibrationCoverageError(gaps)

    cuts, baseline = {}, {}
    for kind in ALL_KINDS:
        scores = np.array([float(sc[kind]) for sc, _ in samples])
        classes = np.array([int(Severity.parse(truth.get(kind, Severity.NONE))) for _, truth in samples])
        cuts[kind], _ = _best_cuts(scores, classes)
        clean = scores[classes == 0]
        baseline[kind] = float(np.median(clean)) if len(clean) else cuts[kind][0]
    return ThresholdTable(cuts, baseline)


def table_accuracy(table: ThresholdTable, samples) -> float:
    """Mean 4-class accuracy over all (sample, kind) pairs."""
    hits = total = 0
    for scores, truth in samples:
        for kind in ALL_KINDS:
            hits += table.severity(kind, scores[kind]) == Severity.parse(truth.get(kind, Severity.NONE))
            total += 1
    return hits / total


# ---------------------------------------------------------------------------
# identifiers


class Identifier:
    """Common surface: ``identify`` plus a removal check derived from it."""

    success_level = Severity.NONE

    def identify(self, clip: VideoClip, context: ClipContext | None = None) -> DegradationProfile:
        raise NotImplementedError

    def check_removed(self, clip: VideoClip, kind, context: ClipContext | None = None) -> bool:
        return self.identify(clip, context).severity[parse_kind(kind)] <= self.success_level

    # orchestration hooks; only the oracle keeps state
    def notify_applied(self, kind) -> None:
        pass

    def snapshot(self):
        return None

    def restore(self, state) -> None:
        pass


class OracleIdentifier(Identifier):
    """Reads the ground-truth label and tracks which kinds have been treated."""

    success_level = Severity.NONE

    def __init__(self, label: GroundTruthLabel | dict | None = None):
        if label is None:
            truth = {}
        elif isinstance(label, GroundTruthLabel):
            truth = label.severity_map()
        else:
            truth = {parse_kind(k): Severity.parse(v) for k, v in label.items()}
        self._truth = truth
        self._removed: set = set()

    def identify(self, clip: VideoClip, context=None) -> DegradationProfile:
        if len(clip) == 0:
            raise InvalidArgumentError("empty clip")
        sev = {k: s for k, s in self._truth.items() if k not in self._removed}
        return DegradationProfile(sev, {k: float(s) for k, s in sev.items()})

    def notify_applied(self, kind) -> None:
        kind = parse_kind(kind)
        if kind in self._truth:
            self._removed.add(kind)

    def snapshot(self):
        return frozenset(self._removed)

    def restore(self, state) -> None:
        self._removed = set(state or ())


class FidelityOracleIdentifier(OracleIdentifier):
    """Evaluation-mode oracle: a treated kind only counts as removed if PSNR against
    ``reference`` rose over the clip the step started from."""

    def __init__(self, label, reference: VideoClip):
        super().__init__(label)
        self.reference = reference
        self._pending = None
        self._baseline = None

    def _fidelity(self, clip: VideoClip) -> float:
        from .quality import conform, psnr

        return psnr(conform(clip, self.reference), self.reference)

    def identify(self, clip: VideoClip, context=None) -> DegradationProfile:
        value = self._fidelity(clip)
        if self._pending is not None:
            if self._baseline is None or value > self._baseline:
                self._removed.add(self._pending)
            self._pending = None
        self._baseline = value
        return super().identify(clip, context)

    def notify_applied(self, kind) -> None:
        kind = parse_kind(kind)
        if kind in self._truth:
            self._pending = kind

    def snapshot(self):
        return frozenset(self._removed), self._baseline

    def restore(self, state) -> None:
        removed, self._baseline = state if state is not None else ((), None)
        self._removed = set(removed)
        self._pending = None


class HeuristicIdentifier(Identifier):
    def __init__(self, thresholds: ThresholdTable | None = None, success_level=Severity.LOW):
        self.thresholds = thresholds or default_thresholds()
        self.success_level = Severity.parse(success_level)

    def identify(self, clip: VideoClip, context: ClipContext | None = None) -> DegradationProfile:
        scores, low_conf = detector_scores(clip, context)
        sev = {k: self.thresholds.severity(k, v) for k, v in scores.items()}
        return DegradationProfile(sev, scores, low_conf)


def truth_map(label: GroundTruthLabel | None) -> dict:
    return {} if label is None else label.severity_map()
