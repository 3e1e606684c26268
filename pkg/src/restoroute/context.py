"""Pipeline context shared by identifiers, tools and assessors."""

from __future__ import annotations

from dataclasses import dataclass

from .media import VideoClip


@dataclass(frozen=True)
class ClipContext:
    """Nominal delivery geometry plus optional evaluation reference.

    Absolute "low resolution" or "low frame rate" is undefined without a
    target, so resolution and frame-rate logic reads the nominal values here.
    """

    nominal_width: int | None = None
    nominal_height: int | None = None
    nominal_fps: float | None = None
    nominal_frames: int | None = None
    reference: VideoClip | None = None

    @classmethod
    def from_clip(cls, clip: VideoClip, with_reference: bool = False) -> "ClipContext":
        return cls(clip.width, clip.height, clip.fps, len(clip), clip if with_reference else None)

    @classmethod
    def from_gt_entry(cls, entry: dict, reference: VideoClip | None = None) -> "ClipContext":
        return cls(entry["width"], entry["height"], entry["fps"], entry.get("frames"), reference)

    @property
    def has_geometry(self) -> bool:
        return self.nominal_width is not None and self.nominal_height is not None

    def to_json(self) -> dict:
        return {
            "nominal_width": self.nominal_width,
            "nominal_height": self.nominal_height,
            "nominal_fps": self.nominal_fps,
            "nominal_frames": self.nominal_frames,
        }
