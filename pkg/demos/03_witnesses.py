"""Build certified witness pairs and move them to another ball."""
from divcurl import factorize_phi, gradient_system, make_grid, rescale_to_ball
from divcurl import witness_large_p, witness_small_p, witness_unit_ball
from divcurl.witnesses import bump_field, normalized_bump

sys = gradient_system(2)
# the cutoff ramp needs fine sampling; 64 cells per unit keeps residuals near 1e-10
grid = make_grid(2, [384, 384], [6.0, 6.0])
origin, ball = (0.0, 0.0), ((0.0, 0.0), 1.0)
for p in (4 / 3, 4.0):
    q = p / (p - 1)
    u = normalized_bump(grid, origin, 1.0, 2.0)
    first = witness_small_p if p <= 2 else witness_large_p
    pairs = [first(sys, u, ball, 0, 1, p),
             witness_unit_ball(sys, normalized_bump(grid, origin, 1.0, q), 0, 1, p),
             factorize_phi(sys, bump_field(grid, origin, 0.5), "div", p)]
    for P in pairs:
        moved = rescale_to_ball(P, (1.0, -0.5), 1.0)
        print(f"p = {p:.4g} {P.kind:12s} certificate passed={P.certificate.passed}, "
              f"after moving passed={moved.certificate.passed}")
        for e in P.certificate.entries:
            print(f"    {e.name:28s} {e.value:.2e} <= {e.bound:.2e}")
