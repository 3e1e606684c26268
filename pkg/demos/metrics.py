"""Full-reference and no-reference quality of a scene under increasing noise."""

import numpy as np

from restoroute.context import ClipContext
from restoroute.degrade import DegradationKind as K, DegradationSpec, Severity, apply_degradation
from restoroute.media import VideoClip
from restoroute.quality import assess_nr, psnr, ssim
from restoroute.scenes import synthetic_scene


def main():
    flat = VideoClip(np.full((4, 128, 128, 3), 0.5), 30.0)
    noisy = VideoClip(flat.data + np.random.default_rng(0).normal(0, 0.05, flat.data.shape), 30.0)
    print(f"sigma 0.05 on a flat clip: {psnr(noisy, flat):.2f} dB (analytic 26.02)")

    gt = synthetic_scene(320, 180, 8, 30.0, seed=3)
    ctx = ClipContext.from_clip(gt)
    print(f"{'severity':8s} {'psnr':>7s} {'ssim':>6s} {'nr':>6s}")
    for sev in Severity:
        clip = gt if not sev else apply_degradation(gt, DegradationSpec(K.NOISE, sev, {}, 1))
        print(f"{sev.label:8s} {psnr(clip, gt):7.2f} {ssim(clip, gt):6.3f} {assess_nr(clip, ctx):6.2f}")


if __name__ == "__main__":
    main()
