"""Two-sided bmo bounds: witness pairings against the bmo norm for a 10-field suite."""
from divcurl import run_experiment

report = run_experiment({}, "thm-b", refine=True)
for key, s in report.summary.items():
    print(f"p = {key}: C_grid {s['C_grid']:.4f}, band {s['band'][0]:.4f} .. {s['band'][1]:.4f}, "
          f"{s['witnesses']} witnesses")
for row in report.trials:
    if row["p"] == 2.0:
        print(f"  {row['g']:10s} lower {row['lhs']:.4g}  bmo {row['rhs']:.4g}  "
              f"ratio {row['ratio']:.4f}  via {row['best_witness']}")
print("assertions:", {k: a["passed"] for k, a in report.assertions.items()})
