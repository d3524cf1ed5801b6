"""
Near-field channels on a uniform linear array
=============================================

Where the near field ends for the 256 x 8 link at 60 GHz, how far the
spherical steering vector drifts from the planar one, and what a
multipath channel looks like.
"""
import numpy as np

from nfmimo.channel import (
    ArrayGeometry,
    DatasetConfig,
    channel_matrix,
    rayleigh_distance,
    sample_paths,
    steering_vector,
)

rx, tx = ArrayGeometry(256, 60e9), ArrayGeometry(8, 60e9)
d_R = rayleigh_distance(rx, tx)
print(f"wavelength {rx.wavelength * 1e3:.2f} mm, Rayleigh distance {d_R:.2f} m")

# phase error of the far-field model at a few distances, angle sin(theta)=0.4
far = steering_vector(rx, 0.4, np.inf)
for r in (3.0, 10.0, 50.0, d_R, 1e4):
    near = steering_vector(rx, 0.4, r)
    err = np.max(np.abs(np.angle(near * far.conj())))
    corr = abs(np.vdot(far, near))
    print(f"r = {r:8.1f} m   max phase gap {err:6.3f} rad   |<a_far, a_near>| = {corr:.3f}")

# a random channel from the dataset generator
cfg = DatasetConfig(Nr=256, Nt=8, seed=1)
rng = np.random.default_rng(1)
paths = sample_paths(cfg, rng)
H = channel_matrix(paths, rx, tx).matrix
s = np.linalg.svd(H, compute_uv=False)
print(f"\n{len(paths)} paths, ||H||_F^2 = {np.linalg.norm(H) ** 2:.1f} (NtNr = {256 * 8})")
print("singular values:", np.round(s, 2))
