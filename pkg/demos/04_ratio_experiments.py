"""Run the ratio experiments on their default ensembles with one grid refinement."""
from divcurl import run_experiment

for exp in ("thm-a", "thm-12", "thm-13", "lemma-21"):
    report = run_experiment({"ensemble": {"count": 30}}, exp, refine=True)
    print(f"{exp}: passed={report.passed}")
    for row in report.refinement["table"]:
        print(f"  p = {row['p']}: max ratio {row['coarse_max_ratio']:.5g} -> {row['fine_max_ratio']:.5g}")
