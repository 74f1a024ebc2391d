"""One full online-learning run, end to end.

Runs the predictor-guided controller for ten simulated minutes on the
static redis scenario, then compares where it landed against the
brute-force oracle ceiling and reports how long it took to stabilize.
"""

import tempfile

from coschedlab.config import ExperimentConfig
from coschedlab.harness import oracle_static, read_trace, run_experiment, stability_time

cfg = ExperimentConfig(profile="redis", method="rapid", seed=1, duration_s=600.0)

orc = oracle_static(cfg)
best = orc["best"]
print(f"oracle: best allocation (mbw={best['mbw_idx']}, cf={best['cf_idx']}), "
      f"ceiling {best['mean_be_instr_per_s'] / 1e9:.2f} Ginstr/s, "
      f"{orc['n_feasible']}/36 feasible")

with tempfile.TemporaryDirectory() as out:
    art = run_experiment(cfg, out)
    s = art.summary
    print(f"run: qos violation {s['weighted_qos_violation_pct']:.4f}%, "
          f"BE {s['mean_be_instr_per_s'] / 1e9:.2f} Ginstr/s, "
          f"wall {s['wall_clock_s']:.1f}s")
    t = stability_time(read_trace(art.trace_path), s["qos_target_ms"],
                       best["mean_be_instr_per_s"])
    print(f"stable (60s window, <=0.1% qos, >=90% of ceiling) after {t:.1f}s "
          "of regular-phase control" if t is not None else "never stabilized")
