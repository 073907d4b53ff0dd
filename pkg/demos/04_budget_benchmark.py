#### ESTIMATOR ERROR AS A FUNCTION OF BUDGET
# Ten features (three active, seven inert), hazard-scale game: how close do
# the Monte-Carlo, permutation and kernel-regression estimators get to the
# exact order-2 decomposition per evaluation budget?

import collections

import numpy as np

from survix.validation import run_benchmark

budgets = (64, 128, 256, 512)
rows = run_benchmark(seed=7, budgets=budgets, repetitions=10)

agg = collections.defaultdict(list)
flagged = collections.defaultdict(int)
for row in rows:
    agg[(row["method"], row["budget"])].append(row["mse"])
    flagged[(row["method"], row["budget"])] += row["unstable"]

print(f"{'method':>12s} " + " ".join(f"{b:>10d}" for b in budgets))
for method in ("mc", "permutation", "regression"):
    meds = [float(np.median(agg[(method, b)])) for b in budgets]
    print(f"{method:>12s} " + " ".join(f"{m:10.2e}" for m in meds))

print("\nregression runs flagged unstable per budget:",
      {b: flagged[("regression", b)] for b in budgets})
print("""
The kernel regression is the most faithful once its budget comfortably
exceeds the 56 basis functions (1 + 10 singles + 45 pairs); right at that
boundary (budget 64) the fit sits in the interpolation regime and its error
spikes, which the instability flag reports.
""")
