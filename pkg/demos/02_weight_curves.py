#!/usr/bin/env python3
"""The overlap weight as a function of the cardinality ratio.

Shows the three properties that make the weight useful: it is 1 when the two
candidate sets barely overlap, it decays as the overlap (vocabulary
correlation) grows, and larger databases push the whole curve down. Writes
weight_curves.png when matplotlib is importable.
"""

import numpy as np

from bowmerge import MergeConfig, bayes_weight

SIZES = [5_000, 10_000, 100_000, 1_000_000]

union = 1000
inters = np.arange(0, union + 1)
ratios = inters / union

curves = {}
for n in SIZES:
    cfg = MergeConfig(n_images=n, c=1.0)  # unit prior weight, like a bare N
    curves[n] = bayes_weight(inters, np.full_like(inters, union), cfg)

print(f"{'ratio':>6} " + " ".join(f"N={n:>9,}" for n in SIZES))
for r in (0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0):
    i = int(round(r * union))
    row = " ".join(f"{curves[n][i]:11.4f}" for n in SIZES)
    print(f"{r:6.2f} {row}")

print("\nweight at ratio 0 is exactly 1:",
      all(curves[n][0] == 1.0 for n in SIZES))
print("curves lean toward the origin as N grows:",
      all(np.all(curves[a] >= curves[b]) for a, b in zip(SIZES, SIZES[1:])))

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for n in SIZES:
        ax.plot(ratios, curves[n], label=f"N = {n:,}")
    ax.set_xlabel("overlap cardinality ratio")
    ax.set_ylabel("estimated true-match probability")
    ax.legend()
    fig.tight_layout()
    fig.savefig("weight_curves.png", dpi=120)
    print("wrote weight_curves.png")
except ImportError:
    print("matplotlib not available; skipped the plot")
