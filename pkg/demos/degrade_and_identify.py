"""Degrade a synthetic scene at every severity, then identify it with the oracle and the detector bank."""

from restoroute.context import ClipContext
from restoroute.degrade import ALL_KINDS, DegradationSpec, Severity, compose_mixed
from restoroute.identify import HeuristicIdentifier, OracleIdentifier
from restoroute.scenes import synthetic_scene


def main():
    gt = synthetic_scene(320, 180, 16, 30.0, seed=1, clip_id="demo")
    ctx = ClipContext.from_clip(gt)
    heuristic = HeuristicIdentifier()
    print(f"{'kind':12s} {'severity':8s} {'oracle':8s} heuristic")
    for kind in ALL_KINDS:
        for sev in (Severity.LOW, Severity.MEDIUM, Severity.HIGH):
            clip, label = compose_mixed(gt, [DegradationSpec(kind, sev, {}, seed=7)])
            oracle = OracleIdentifier(label).identify(clip).severity[kind]
            guess = heuristic.identify(clip, ctx).severity[kind]
            print(f"{kind.value:12s} {sev.label:8s} {oracle.label:8s} {guess.label}")


if __name__ == "__main__":
    main()
