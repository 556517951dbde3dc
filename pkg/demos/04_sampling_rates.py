"""Adaptive promotion rates: how class counts map to sampling probabilities.

Writes demos/output/sampling_rates.png showing the rate curve for several
exponents, and simulates a stochastic promotion round.

Run:  python3 demos/04_sampling_rates.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rebalance_ssl import sampling_rates, select_for_promotion
from rebalance_ssl.fixmatch import PseudoLabel

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

counts = [100, 50, 10]
for alpha in (0.0, 1 / 3, 0.5, 1.0):
    rates = sampling_rates(counts, alpha)
    print(f"alpha={alpha:<5} counts={counts} -> mu={[round(m, 4) for m in rates.mu]}")
print("the rarest class is always promoted with certainty (mu = 1)")

# rate curves across a long-tail count profile
profile = sorted((np.round(100 * 0.1 ** (i / 9)).astype(int) for i in range(10)), reverse=True)
fig, ax = plt.subplots(figsize=(6, 4))
for alpha in (1 / 3, 0.5, 1.0):
    mu = sampling_rates(list(profile), alpha).mu
    ax.plot(profile, mu, marker="o", label=f"alpha={alpha:.2f}")
ax.set_xlabel("labeled class count")
ax.set_ylabel("promotion rate")
ax.set_ylim(0, 1.05)
ax.legend()
fig.tight_layout()
target = out_dir / "sampling_rates.png"
fig.savefig(target, dpi=110)
print("wrote", target)

# stochastic promotion: expected promoted counts are candidates * mu
rates = sampling_rates(counts, 1 / 3)
candidates = [
    PseudoLabel(f"c{c}/u{i}", c, 0.99) for c, n in enumerate([300, 150, 30]) for i in range(n)
]
selected = select_for_promotion(candidates, rates, np.random.default_rng(0))
got = [0, 0, 0]
for cand in selected:
    got[cand.class_id] += 1
for c in range(3):
    expected = [300, 150, 30][c] * rates.mu[c]
    print(f"class {c}: candidates={[300, 150, 30][c]:>4} mu={rates.mu[c]:.4f} "
          f"selected={got[c]:>4} (expected ~{expected:.0f})")
