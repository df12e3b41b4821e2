"""Fit a (T, N) decision rule on a small dev set and compare the two tie-break rules.

Both rules pick an F1-optimal cell; they differ in where T lands inside the
run of equally good thresholds.
"""

import numpy as np

from mistlink.corpus import RelevanceJudgment
from mistlink.predictor import calibrate, f1_grid


def main():
    rng = np.random.default_rng(4)
    scores, relevant = {}, set()
    for i in range(12):
        rel = i < 5
        tweet = f"t{i}"
        # each dev tweet scored against the five other members of the target's clique
        scores[tweet] = np.round(rng.normal(2.0 if rel else -1.0, 0.8, size=5), 2)
        if rel:
            relevant.add(tweet)
    judgments = [RelevanceJudgment(t, "m", t in relevant) for t in scores]

    cands, f1 = f1_grid(scores, relevant, 5)
    print(f"{len(cands)} threshold candidates x 5 counts, best F1 {f1.max():.3f}")
    for rule in ("strict", "margin"):
        table = calibrate({"m": scores}, judgments, "all", {"m": 5}, tie_break=rule)
        print(f"{rule:6s}: T = {table.score['m']:.3f}, N = {table.count['m']}")
    print("\nrelevant tweets' scores:")
    for t in sorted(relevant):
        print(f"  {t}: {scores[t]}")


if __name__ == "__main__":
    main()
