"""
A small benchmark
=================

Two replications of cKG and random search on test-function-2 with a short
budget. Real comparisons use ``ckgopt benchmark`` with many more
replications; this only shows the moving parts.
"""
import warnings

from ckgopt.ckg import CkgConfig
from ckgopt.harness import RunConfig, benchmark

quick = CkgConfig(candidate_count=20, top_subset=2)
configs = [RunConfig(problem="test-function-2", acquisition=a, budget_B=6, init_count=6,
                     replications=2, ckg=quick) for a in ("cKG", "random")]

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    results = benchmark(configs, workers=1)

for cfg, (records, agg) in zip(configs, results):
    trace = " ".join(f"{v:.3f}" for v in agg.mean_oc)
    print(f"{cfg.acquisition:>6}: mean OC by iteration  {trace}")
