"""Split a random vector field into a divergence-free part and an L-gradient."""
from divcurl import cr_system, hodge_decompose, make_grid
from divcurl.harness import EnsembleSpec, random_field

sys = cr_system()
grid = make_grid(3, [32, 32, 32], [1.0, 1.0, 1.0])
V = random_field(grid, EnsembleSpec(seed=3, count=1, band_limit=6, field_kind="vector"), 0, sys)
H = hodge_decompose(sys, V, p_list=[4 / 3, 2.0, 4.0])
print(f"div residual of V1: {H.residual_div:.2e}")
for p, (r1, r2) in sorted(H.norm_ratios.items()):
    print(f"p = {p:.4g}: |V1|_p/|V|_p = {r1:.4f}, |V2|_p/|V|_p = {r2:.4f}")
