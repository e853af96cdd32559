"""Ellipticity certificates and the basic calculus identities on two example systems."""
import numpy as np

from divcurl import certify_ellipticity, cr_system, gradient_system, make_grid, new_system
from divcurl.harness import EnsembleSpec, random_field
from divcurl.operators import curl_L, div_Lstar, grad_L

systems = {
    "gradient (N=n=2)": (gradient_system(2), make_grid(2, [32, 32], [1.0, 1.0])),
    "CR-type (N=3, n=2)": (cr_system(), make_grid(3, [16, 16, 16], [1.0, 1.0, 1.0])),
}
for name, (sys, grid) in systems.items():
    cert = certify_ellipticity(sys)
    spec = EnsembleSpec(seed=0, count=1, band_limit=3, field_kind="scalar", localization=False)
    u = random_field(grid, spec, 0)
    V = grad_L(sys, u)
    W = random_field(grid, EnsembleSpec(1, 1, 3, "vector", False), 0, sys)
    lhs = np.vdot(W.components, V.components)
    rhs = np.vdot(div_Lstar(sys, W).values, u.values)
    print(f"{name}: ellipticity constant {cert.constant:.9f}")
    print(f"  sup |curl grad u| / sup |grad u| = "
          f"{np.abs(curl_L(sys, V).entries).max() / np.abs(V.components).max():.2e}")
    print(f"  adjointness defect = {abs(lhs - rhs) / abs(lhs):.2e}")

bad = certify_ellipticity(new_system(2, 3, [[0], [0]]))
print(f"a = 0 in N=3: elliptic={bad.elliptic}, constant {bad.constant:.3g}")
