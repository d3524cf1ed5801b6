"""
Classical estimators on a small near-field dataset
==================================================

LS, LMMSE (sample covariance from the training split) and OMP over a
polar dictionary, NMSE and spectral efficiency against SNR.
"""
import tempfile

from nfmimo import bench
from nfmimo.channel import DatasetConfig, ArrayGeometry, rayleigh_distance
from nfmimo.dataset import generate_dataset

d_R = rayleigh_distance(ArrayGeometry(32, 60e9), ArrayGeometry(4, 60e9))
cfg = DatasetConfig(Nr=32, Nt=4, sample_count=500, distance_range=(0.5, d_R), seed=3)

with tempfile.TemporaryDirectory() as tmp:
    generate_dataset(cfg, tmp)
    recs = bench.evaluate_dataset(tmp, ["ls", "lmmse", "omp"], [-10, -5, 0, 5, 10])

print(f"{'method':<7}{'SNR':>5}{'NMSE dB':>10}{'SE b/s/Hz':>11}")
for r in recs:
    print(f"{r.method:<7}{r.snr_db:5g}{r.nmse_db:10.2f}{r.se_bits:11.3f}")
