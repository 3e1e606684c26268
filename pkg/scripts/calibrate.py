"""Regenerate the shipped detector thresholds from a seeded desk calibration set."""

import argparse
import time
from importlib import resources
from pathlib import Path

from restoroute.desk import desk_scenes, kind_accuracy, scored, single_set
from restoroute.identify import calibrate_thresholds, table_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=6)
    ap.add_argument("--per-kind", type=int, default=24)
    ap.add_argument("--seed", type=int, default=1000)
    ap.add_argument("--out", default=str(resources.files("restoroute.data") / "thresholds.json"))
    args = ap.parse_args()

    t0 = time.time()
    gts = desk_scenes(args.scenes, args.seed)
    samples = scored(single_set(gts, args.per_kind, args.seed, include_clean=True))
    table = calibrate_thresholds(samples)
    table.save(Path(args.out))
    print(f"{len(samples)} samples in {time.time() - t0:.0f}s; severity acc {table_accuracy(table, samples):.3f}, "
          f"kind acc {kind_accuracy(table, samples):.3f} -> {args.out}")


if __name__ == "__main__":
    main()
