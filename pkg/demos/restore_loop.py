"""Run the closed restoration loop on a doubly degraded clip and print the trace."""

from restoroute.context import ClipContext
from restoroute.degrade import DegradationKind as K, DegradationSpec, Severity, compose_mixed
from restoroute.identify import OracleIdentifier
from restoroute.orchestrator import RestoreConfig, replay, restore
from restoroute.quality import conform, psnr
from restoroute.router import KnowledgeBase
from restoroute.scenes import synthetic_scene
from restoroute.toolbox import default_toolbox


def main():
    gt = synthetic_scene(320, 180, 16, 30.0, seed=2, clip_id="demo")
    specs = [DegradationSpec(K.NOISE, Severity.MEDIUM, {}, 1), DegradationSpec(K.COMPRESSION, Severity.HIGH, {}, 2)]
    clip, label = compose_mixed(gt, specs)
    ctx = ClipContext.from_clip(gt, with_reference=True)
    toolbox, kb = default_toolbox(), KnowledgeBase()

    run = restore(clip, toolbox, OracleIdentifier(label), ctx, RestoreConfig(assessor="psnr"), kb)
    for event in run.trace:
        fields = {k: v for k, v in event.items() if k not in ("step", "event", "config", "scores")}
        print(f"{event['step']:3d} {event['event']:9s} {fields}")
    before, after = psnr(conform(clip, gt), gt), psnr(conform(run.output, gt), gt)
    print(f"status {run.status}, {run.invocations} tool invocations, PSNR {before:.2f} -> {after:.2f} dB")
    same = replay(run.trace, clip, toolbox, ctx).data.tobytes() == run.output.data.tobytes()
    print(f"replay reproduces output: {same}")
    print(f"knowledge base now prefers: {[k.value for k in kb.best_sequence(label.kinds)]}")


if __name__ == "__main__":
    main()
