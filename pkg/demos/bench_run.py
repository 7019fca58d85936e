"""Compare the estimated pipeline with the oracle on random linear scenarios."""

import json

from rootcf.bench import ScenarioConfig, run_bench

cfg = ScenarioConfig(p=5, n_train=5000, n_patients=50, seed=0)
result = run_bench(cfg, repeats=3, threads=3)
print(json.dumps(result["summary"], indent=2))
