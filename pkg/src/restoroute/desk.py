"""In-memory desk-scale sample sets for calibration, evaluation and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .context import ClipContext
from .degrade import (
    ALL_KINDS,
    DegradationKind,
    DegradationSpec,
    GroundTruthLabel,
    Severity,
    apply_degradation,
    compose_mixed,
    random_specs,
)
from .identify import ThresholdTable, blockiness_score, detector_scores
from .media import VideoClip, rgb_to_hsv, rgb_to_luma
from .scenes import synthetic_scene


@dataclass(frozen=True)
class DeskSample:
    clip: VideoClip
    label: GroundTruthLabel | None
    gt: VideoClip

    @property
    def context(self) -> ClipContext:
        return ClipContext.from_clip(self.gt)

    @property
    def truth(self) -> dict:
        return {} if self.label is None else self.label.severity_map()


def desk_scenes(count: int, seed: int = 0, width: int = 320, height: int = 180, frames: int = 16):
    rng = np.random.default_rng(seed)
    return [
        synthetic_scene(width, height, frames, 30.0, int(rng.integers(2**31)), f"gt{seed}-{i:02d}")
        for i in range(count)
    ]


def single_set(gt_clips, per_kind: int, seed: int = 0, include_clean: bool = False):
    """Single-degradation clips, ``per_kind`` per kind with severities cycled Low/Medium/High."""
    rng = np.random.default_rng(seed)
    out = []
    if include_clean:
        out.extend(DeskSample(gt, None, gt) for gt in gt_clips)
    for k_i, kind in enumerate(ALL_KINDS):
        for j in range(per_kind):
            gt = gt_clips[(j + k_i) % len(gt_clips)]
            sev = Severity(1 + (j + k_i) % 3)
            spec = DegradationSpec(kind, sev, {}, int(rng.integers(2**63)))
            clip, label = compose_mixed(gt, [spec], f"{gt.id}-{kind.value}-{j:02d}")
            out.append(DeskSample(clip, label, gt))
    return out


def mixed_set(gt_clips, arity: int, per_gt: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    out = []
    for gt in gt_clips:
        for j in range(per_gt):
            specs = random_specs(rng, arity, None, len(gt))
            clip, label = compose_mixed(gt, specs, f"{gt.id}-x{arity}-{j:02d}")
            out.append(DeskSample(clip, label, gt))
    return out


def scored(samples):
    """``(scores, truth)`` pairs in the shape :func:`calibrate_thresholds` expects."""
    return [(detector_scores(s.clip, s.context)[0], s.truth) for s in samples]


def predicted_kind(table: ThresholdTable, scores: dict):
    levels = [table.level(k, scores[k]) for k in ALL_KINDS]
    return ALL_KINDS[int(np.argmax(levels))]


def kind_accuracy(table: ThresholdTable, scored_singles) -> float:
    """Share of single-degradation clips whose strongest continuous level names the true kind."""
    hits = [predicted_kind(table, sc) == next(iter(truth)) for sc, truth in scored_singles if truth]
    return float(np.mean(hits))


def _mean_gradient(data: np.ndarray) -> float:
    luma = rgb_to_luma(data)
    gy, gx = np.gradient(luma, axis=(1, 2))
    return float(np.mean(np.hypot(gx, gy)))


# statistic per kind and the direction it must move as severity rises
MONOTONE_STATS = {
    DegradationKind.NOISE: (lambda d: float(np.var(d)), +1),
    DegradationKind.BLUR: (_mean_gradient, -1),
    DegradationKind.LOW_LIGHT: (lambda d: float(rgb_to_hsv(d)[..., 2].mean()), -1),
    DegradationKind.COMPRESSION: (lambda d: blockiness_score(rgb_to_luma(d)), +1),
    DegradationKind.HAZE: (lambda d: float(rgb_to_hsv(d)[..., 2].std()), -1),
}


def severity_monotonicity(clip: VideoClip, seed: int = 0) -> dict:
    """Per kind: the statistic at Low, Medium, High and whether it moves strictly as required."""
    out = {}
    for kind, (stat, direction) in MONOTONE_STATS.items():
        values = [stat(apply_degradation(clip, DegradationSpec(kind, sev, {}, seed)).data)
                  for sev in (Severity.LOW, Severity.MEDIUM, Severity.HIGH)]
        ok = all(direction * (b - a) > 0 for a, b in zip(values, values[1:]))
        out[kind] = (values, ok)
    return out
