"""Screen a simulated rating panel for outliers and compute per-video MOS."""

import numpy as np

from restoroute.quality import RatingMatrix, compute_mos, reject_outliers


def main(subjects=15, videos=40, seed=0, spread=0.4):
    # the 3% rule needs enough videos per subject: one stray rating in 8 is already 12.5%
    rng = np.random.default_rng(seed)
    quality = rng.uniform(1.5, 4.5, videos)
    ratings = np.clip(np.round(quality + rng.normal(0, spread, (subjects, videos))), 1, 5)
    ratings[3] = 6 - ratings[3]  # one rater inverts the scale
    matrix = RatingMatrix(tuple(f"s{i:02d}" for i in range(subjects)), tuple(f"v{j}" for j in range(videos)), ratings)
    kept = reject_outliers(matrix)
    # screening repeats until stable, so a borderline rater can fall once the inverter is gone
    print(f"rejected: {sorted(set(matrix.subjects) - set(kept.subjects))} (planted inverter: s03)")
    result = compute_mos(kept)
    for video, mos, n in list(zip(result.videos, result.mos, result.n_raters))[:8]:
        print(f"{video}: MOS {mos:6.2f} from {n} raters")


if __name__ == "__main__":
    main()
