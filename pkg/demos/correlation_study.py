"""
Antenna correlation in the near field
=====================================

Angular and distance-domain correlation of a 256-element array, closed
form against quadrature and Monte Carlo.
"""
import numpy as np

from nfmimo.channel import ArrayGeometry
from nfmimo.correlation import (
    AngularSpreadModel,
    DistanceSpreadModel,
    b_theta_from_omega,
    b_theta_quadrature,
    corr_monte_carlo,
    distance_sweep,
    frobenius_gap,
    omega_sweep,
    r_theta_closed,
)

geom = ArrayGeometry(256, 60e9)
d = geom.element_spacing

# phase coefficient omega against element 128, near versus far field
m, w_near, w_far = omega_sweep(256, 128, np.pi / 6, 10.0, d)
print("omega(m, 128) at r0 = 10 m vs planar, every 32nd element")
for i in range(0, 256, 32):
    print(f"  m={m[i]:3d}  near {w_near[i]:9.3f}  far {w_far[i]:9.3f}")

# closed form against quadrature for a few omega
print("\nB_theta, sigma_phi = 0.1")
for w in (0.0, 1.0, 10.0, 40.0):
    print(f"  omega={w:5.1f}  closed {b_theta_from_omega(w, 0.1): .12f}  quad {b_theta_quadrature(w, 0.1): .12f}")

# distance-domain correlation grows towards one with the mean distance
model = DistanceSpreadModel(10.0, 10.0, 0.0)
r0s = [10.0, 1e2, 1e3, 1e4, 1e5, 1e7]
print("\nK_r |B_r(160, 96)|, sigma_psi = 10 m")
for r0, v in zip(r0s, distance_sweep(160, 96, model, d, r0s)):
    print(f"  r0 = {r0:9.0f} m   {v:.6f}")

# Monte-Carlo cross-check on a smaller array
g32 = ArrayGeometry(32, 60e9)
R = r_theta_closed(AngularSpreadModel(np.pi / 6, 0.05, 20.0), g32)
mc = corr_monte_carlo(np.pi / 6, 0.05, 20.0, 0.0, g32, 200_000, np.random.default_rng(0))
print(f"\nclosed form vs Monte Carlo (N=32, 2e5 draws): relative gap {frobenius_gap(R, mc):.3e}")
