#!/usr/bin/env python3
"""Sample workers proportionally to locally-held weights over a tree.

Workers only know their own weight.  Group leaders sample locally, then
subtree owners merge candidate indices pairwise; R indices land at the last
machine after O(M) worker-to-worker scalars, regardless of R.  The
latency-optimised variant spreads the R candidates over R parallel
single-index chains.
"""

import numpy as np

from hetsvrg import comm

# the cost ledger: scalars per channel class plus synchronous rounds
print("protocol costs for one call (uniform weights):")
print("      M   R | ww scalars | bound 3M-M/R | rounds")
for M, R in [(8, 2), (12, 3), (16, 4), (32, 8)]:
    ledger = comm.CommLedger()
    comm.pc_sample([1.0] * M, R, ledger, np.random.default_rng(0))
    print(f"    {M:3d} {R:3d} | {ledger.worker_worker_scalars:10d} |"
          f" {3 * M - M // R:12d} | {ledger.parallel_rounds:6d}")

# marginals: each of the R slots lands on worker i with probability w_i / sum w
weights = [1.0, 1.0, 3.0, 2.0]
rng = np.random.default_rng(1)
ledger = comm.CommLedger()
counts = np.zeros(4)
draws = 100_000
for _ in range(draws):
    hist = comm.pc_sample(weights, 1, ledger, rng)
    for idx, mult in hist.items():
        counts[idx] += mult
print("\nweights", weights)
print("exact marginals    ", np.asarray(weights) / sum(weights))
print("empirical marginals", counts / draws)

# the round-optimised variant: same marginals, fewer rounds for large R
for name, proto in [("tree merge", comm.pc_sample), ("parallel chains", comm.optimal_comm_sample)]:
    ledger = comm.CommLedger()
    rng = np.random.default_rng(2)
    counts = np.zeros(8)
    for _ in range(20_000):
        hist = proto([float(i + 1) for i in range(8)], 4, ledger, rng)
        for idx, mult in hist.items():
            counts[idx] += mult
    print(f"\n{name}: per-call rounds {ledger.parallel_rounds / 20_000:.0f}, "
          f"ww scalars {ledger.worker_worker_scalars / 20_000:.0f}")
    print("  empirical marginals", np.round(counts / counts.sum(), 3))
print("\nexact              ", np.round(np.arange(1, 9) / 36, 3))
print("\nledger CSV:", comm.CommLedger.CSV_HEADER)
print("           ", ledger.csv_row("demo"))
