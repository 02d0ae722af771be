"""Why the four-corner integral of an antiderivative field is zero.

The field only sees the outgoing azimuth through cos/sin, so it is
2 pi periodic in phi_o and the corner terms cancel in pairs.  The
quadrature of the scaled derivative does not settle either, because the
half/difference embedding is singular at the specular direction.
"""
import numpy as np

from pbnbrdf.field import (FieldModel, brdf_eval, g_value, hemisphere_integral_closed,
                           quadrature_convergence)
from pbnbrdf.geom import SphericalDir

m = FieldModel.init(11, hidden=(16, 16))
wi = SphericalDir(np.array([0.5]), np.array([1.0]))

for phi in (0.0, 2 * np.pi):
    for theta in (0.0, np.pi / 2):
        g = g_value(m, wi, SphericalDir(np.array([theta]), np.array([phi])))[0]
        print(f"g(theta_o={theta:.3f}, phi_o={phi:.3f}) = {g}")

print("four-corner integral:", np.asarray(hemisphere_integral_closed(m, wi))[0])
print("two-term variant:   ", np.asarray(hemisphere_integral_closed(m, wi, two_term=True))[0])

vals, diffs = quadrature_convergence(lambda a, b: brdf_eval(m, a, b, raw=True), wi, (16, 32, 64, 128, 256))
for order, v in zip((16, 32, 64, 128, 256), vals):
    print(f"quadrature order {order:3d}: {v[0]}")
print("successive differences:", ["%.3g" % d for d in diffs])
