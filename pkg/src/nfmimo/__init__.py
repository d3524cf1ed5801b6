"""
Near-field XL-MIMO channel estimation workbench.

Submodules
----------
channel
    Array geometry, spherical-wavefront steering vectors and multipath channels.
correlation
    Angular and distance-domain antenna correlation, closed form and numeric.
pilots
    Pilot observations and the LS, LMMSE and OMP estimators.
dataset
    Reproducible dataset generation and the binary sample format.
autograd
    Small reverse-mode autodiff engine used by the networks.
mssan
    Multi-scale spatial attention network, the SAN ablation and a CNN baseline.
bench
    Training, metrics, evaluation and sweeps.
"""

__version__ = "0.1.0"

from . import autograd, bench, channel, correlation, dataset, mssan, pilots  # noqa: E402

__all__ = ["autograd", "bench", "channel", "correlation", "dataset", "mssan", "pilots", "__version__"]
