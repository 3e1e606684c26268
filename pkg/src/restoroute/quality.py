"""Quality assessment: full-reference metrics, a no-reference proxy and MOS processing."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .context import ClipContext
from .degrade import ALL_KINDS, DegradationKind, parse_kind
from .errors import DegenerateRaterError, InsufficientDataError, InvalidArgumentError, InvalidFormatError
from .identify import ThresholdTable, default_thresholds, detector_scores
from .media import VideoClip, rgb_to_luma

PSNR_CAP_DB = 100.0
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1, SSIM_K2 = 0.01, 0.03
# penalty per unit of continuous severity, sized to the typical PSNR cost of each kind
NR_WEIGHTS = {
    DegradationKind.NOISE: 7.0,
    DegradationKind.BLUR: 7.0,
    DegradationKind.COMPRESSION: 7.0,
    DegradationKind.LOW_LIGHT: 14.0,
    DegradationKind.RAIN: 12.0,
    DegradationKind.HAZE: 14.0,
    DegradationKind.LOW_RES: 8.0,
    DegradationKind.LOW_FPS: 10.0,
}
MIN_SCREEN_SUBJECTS = 5
MIN_RATERS = 3


def _pixels(x) -> np.ndarray:
    return x.data if isinstance(x, VideoClip) else np.asarray(x, dtype=np.float64)


def _same_shape(a, b):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(test, reference) -> float:
    """Peak signal-to-noise ratio in dB for intensities in [0, 1], capped at 100 dB."""
    a, b = _same_shape(test, reference)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


def ssim_frames(test, reference) -> np.ndarray:
    """Per-frame SSIM on BT.601 luma with an 11x11 Gaussian window."""
    a, b = _same_shape(test, reference)
    if a.ndim == 3:
        a, b = a[None], b[None]
    x, y = rgb_to_luma(a), rgb_to_luma(b)
    c1, c2 = SSIM_K1**2, SSIM_K2**2

    def win(z):
        return ndimage.gaussian_filter(z, (0, SSIM_SIGMA, SSIM_SIGMA), mode="reflect",
                                       truncate=SSIM_RADIUS / SSIM_SIGMA)

    mx, my = win(x), win(y)
    sxx = win(x * x) - mx * mx
    syy = win(y * y) - my * my
    sxy = win(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return smap.mean(axis=(1, 2))


def ssim(test, reference) -> float:
    return float(np.mean(ssim_frames(test, reference)))


def conform(clip: VideoClip, reference: VideoClip) -> VideoClip:
    """Bring ``clip`` onto the reference geometry: nearest-neighbour upscale, frame hold."""
    if clip.data.shape == reference.data.shape and clip.fps == reference.fps:
        return clip
    data = clip.data
    if (clip.height, clip.width) != (reference.height, reference.width):
        rows = np.minimum((np.arange(reference.height) * clip.height) // reference.height, clip.height - 1)
        cols = np.minimum((np.arange(reference.width) * clip.width) // reference.width, clip.width - 1)
        data = data[:, rows][:, :, cols]
    if len(data) != len(reference):
        idx = np.minimum((np.arange(len(reference)) * len(data)) // len(reference), len(data) - 1)
        data = data[idx]
    return VideoClip(data, reference.fps, clip.id)


@dataclass(frozen=True)
class QualityReport:
    nr_score: float
    psnr_db: float | None = None
    ssim: float | None = None
    per_frame: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"nr_score": self.nr_score, "psnr_db": self.psnr_db, "ssim": self.ssim, "per_frame": self.per_frame}


def nr_levels(clip: VideoClip, context: ClipContext | None = None, thresholds: ThresholdTable | None = None) -> dict:
    thresholds = thresholds or default_thresholds()
    scores, _ = detector_scores(clip, context)
    return {k: max(0.0, thresholds.level(k, scores[k])) for k in ALL_KINDS}


def assess_nr(clip: VideoClip, context: ClipContext | None = None, thresholds: ThresholdTable | None = None,
              weights: dict | None = None) -> float:
    """100 minus the weighted sum of continuous detector severities, clamped to [0, 100]."""
    levels = nr_levels(clip, context, thresholds)
    weights = {**NR_WEIGHTS, **{parse_kind(k): float(v) for k, v in (weights or {}).items()}}
    penalty = sum(weights[k] * lvl for k, lvl in levels.items())
    return float(np.clip(100.0 - penalty, 0.0, 100.0))


def report(clip: VideoClip, reference: VideoClip | None = None, context: ClipContext | None = None,
           thresholds: ThresholdTable | None = None) -> QualityReport:
    nr = assess_nr(clip, context, thresholds)
    if reference is None:
        return QualityReport(nr)
    test = conform(clip, reference)
    frames = [
        {"frame": i, "psnr_db": psnr(t, r), "ssim": float(s)}
        for i, (t, r, s) in enumerate(zip(test.data, reference.data, ssim_frames(test, reference)))
    ]
    return QualityReport(nr, psnr(test, reference), ssim(test, reference), frames)


# ---------------------------------------------------------------------------
# assessors: the SelectBest comparator


class Assessor:
    name = "base"

    def score(self, clip: VideoClip, context: ClipContext | None = None, subtask=None) -> float:
        raise NotImplementedError


class NRAssessor(Assessor):
    """Deployment mode: no reference, detector-based proxy."""

    name = "nr"

    def __init__(self, thresholds: ThresholdTable | None = None, weights: dict | None = None):
        self.thresholds = thresholds or default_thresholds()
        self.weights = weights

    def score(self, clip, context=None, subtask=None) -> float:
        # subtask is advisory only; the proxy always scores every kind
        return assess_nr(clip, context, self.thresholds, self.weights)


class PSNRAssessor(Assessor):
    """Evaluation mode: PSNR against the ground truth held in the context."""

    name = "psnr"

    def score(self, clip, context=None, subtask=None) -> float:
        if context is None or context.reference is None:
            raise InvalidArgumentError("psnr assessor needs a reference clip in the context")
        return psnr(conform(clip, context.reference), context.reference)


# ---------------------------------------------------------------------------
# subjective scores


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Subjects x videos raw ratings; NaN marks a missing rating."""

    subjects: tuple
    videos: tuple
    ratings: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.ratings, dtype=np.float64)
        if r.shape != (len(self.subjects), len(self.videos)):
            raise InvalidFormatError(f"ratings shape {r.shape} does not match subjects x videos")
        if len(set(self.subjects)) != len(self.subjects) or len(set(self.videos)) != len(self.videos):
            raise InvalidFormatError("duplicate subject or video ids")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "videos", tuple(self.videos))
        object.__setattr__(self, "ratings", r)

    def __eq__(self, other) -> bool:
        return (isinstance(other, RatingMatrix) and self.subjects == other.subjects
                and self.videos == other.videos and np.array_equal(self.ratings, other.ratings, equal_nan=True))

    def drop_subjects(self, keep: np.ndarray) -> "RatingMatrix":
        keep = np.asarray(keep, dtype=bool)
        return RatingMatrix(tuple(s for s, k in zip(self.subjects, keep) if k), self.videos, self.ratings[keep])

    @classmethod
    def from_records(cls, records) -> "RatingMatrix":
        records = list(records)
        subjects = list(dict.fromkeys(str(s) for s, _, _ in records))
        videos = list(dict.fromkeys(str(v) for _, v, _ in records))
        grid = np.full((len(subjects), len(videos)), np.nan)
        si = {s: i for i, s in enumerate(subjects)}
        vi = {v: i for i, v in enumerate(videos)}
        for s, v, r in records:
            if not np.isnan(grid[si[str(s)], vi[str(v)]]):
                raise InvalidFormatError(f"duplicate rating for subject {s}, video {v}")
            grid[si[str(s)], vi[str(v)]] = float(r)
        return cls(tuple(subjects), tuple(videos), grid)

    @classmethod
    def read_csv(cls, path) -> "RatingMatrix":
        text = Path(path).read_text()
        rows = csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#"))
        if rows.fieldnames is None or [f.strip() for f in rows.fieldnames] != ["subject", "video", "score"]:
            raise InvalidFormatError("ratings CSV header must be subject,video,score")
        try:
            records = [(r["subject"], r["video"], float(r["score"])) for r in rows]
        except (TypeError, ValueError) as exc:
            raise InvalidFormatError(f"bad rating row: {exc}") from exc
        if not records:
            raise InvalidFormatError("ratings CSV has no rows")
        return cls.from_records(records)


def _kurtosis(x: np.ndarray) -> float:
    m2 = np.mean((x - x.mean()) ** 2)
    return float(np.mean((x - x.mean()) ** 4) / (m2 * m2)) if m2 > 0 else 0.0


def _flag_fraction(matrix: RatingMatrix) -> np.ndarray:
    r = matrix.ratings
    flagged = np.zeros(r.shape, dtype=bool)
    for j in range(r.shape[1]):
        rated = ~np.isnan(r[:, j])
        col = r[rated, j]
        if len(col) < 2:
            continue
        sigma = col.std(ddof=1)
        if sigma == 0:
            continue
        beta2 = _kurtosis(col)
        bound = 2.0 * sigma if 2.0 <= beta2 <= 4.0 else math.sqrt(20.0) * sigma
        flagged[rated, j] = np.abs(col - col.mean()) > bound
    counts = (~np.isnan(r)).sum(axis=1)
    return flagged.sum(axis=1) / np.maximum(counts, 1)


def reject_outliers(matrix: RatingMatrix, threshold: float = 0.03) -> RatingMatrix:
    """Kurtosis-aware subject screening, repeated until no subject is removed.

    A round that would leave fewer than the screening minimum is not applied.
    """
    if len(matrix.subjects) < MIN_SCREEN_SUBJECTS:
        raise InsufficientDataError(f"screening needs >= {MIN_SCREEN_SUBJECTS} subjects, got {len(matrix.subjects)}")
    while True:
        keep = _flag_fraction(matrix) <= threshold
        if keep.all() or keep.sum() < MIN_SCREEN_SUBJECTS:
            return matrix
        matrix = matrix.drop_subjects(keep)


@dataclass(frozen=True)
class MosResult:
    videos: tuple
    mos: np.ndarray
    n_raters: np.ndarray

    @property
    def flagged(self) -> tuple:
        """Videos with fewer than three raters."""
        return tuple(v for v, n in zip(self.videos, self.n_raters) if n < MIN_RATERS)

    def as_dict(self) -> dict:
        return {v: float(m) for v, m in zip(self.videos, self.mos)}

    def to_csv(self, comment: str | None = None) -> str:
        lines = [] if comment is None else [f"# {comment}"]
        lines.append("video,mos,n_raters")
        lines += [f"{v},{m:.9f},{int(n)}" for v, m, n in zip(self.videos, self.mos, self.n_raters)]
        return "\n".join(lines) + "\n"


def rescale_z(z):
    return 100.0 * (np.asarray(z, dtype=np.float64) + 3.0) / 6.0


def compute_mos(matrix: RatingMatrix) -> MosResult:
    """Per-subject z-scores rescaled to [0, 100] and averaged per video."""
    r = matrix.ratings
    z = np.full(r.shape, np.nan)
    for i, subject in enumerate(matrix.subjects):
        row = r[i]
        rated = ~np.isnan(row)
        if rated.sum() < 2 or row[rated].std(ddof=1) == 0:
            raise DegenerateRaterError(subject)
        z[i, rated] = (row[rated] - row[rated].mean()) / row[rated].std(ddof=1)
    scaled = rescale_z(z)
    n = (~np.isnan(scaled)).sum(axis=0)
    with np.errstate(invalid="ignore"):
        mos = np.where(n > 0, np.nansum(scaled, axis=0) / np.maximum(n, 1), np.nan)
    return MosResult(matrix.videos, np.clip(mos, 0.0, 100.0), n)
