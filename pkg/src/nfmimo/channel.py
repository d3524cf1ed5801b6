"""
Near-field XL-MIMO channel model.

Uniform linear arrays at both ends, spherical wavefronts approximated to
second order in the element index, and a parametric multipath sum

    H = sqrt(Nt * Nr / L) * sum_l alpha_l * a_R(theta_rl, r_rl) a_T(theta_tl, r_tl)^H

where ``theta`` is the sine of the physical angle and ``r`` the distance from
the scatterer to the reference element (index 0) of the array.

Aperture convention: an N-element array has aperture ``D = N * d``. With
Nr=256, Nt=8 at 60 GHz this gives a MIMO Rayleigh distance of 174.24 m.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# rounded value; gives 174.24 m for the 256x8 link at 60 GHz
SPEED_OF_LIGHT = 3.0e8


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array.

    ``element_spacing`` defaults to half a wavelength.
    """

    num_elements: int
    carrier_freq: float
    element_spacing: float | None = None

    def __post_init__(self):
        if int(self.num_elements) < 1:
            raise ValueError(f"num_elements must be >= 1, got {self.num_elements}")
        if not self.carrier_freq > 0:
            raise ValueError(f"carrier_freq must be positive, got {self.carrier_freq}")
        if self.element_spacing is None:
            object.__setattr__(self, "element_spacing", self.wavelength / 2)
        elif not self.element_spacing > 0:
            raise ValueError(f"element_spacing must be positive, got {self.element_spacing}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def aperture(self) -> float:
        return self.num_elements * self.element_spacing


@dataclass(frozen=True)
class PathComponent:
    gain: complex
    aoa_angle: float
    aod_angle: float
    rx_distance: float
    tx_distance: float

    def __post_init__(self):
        if not (self.rx_distance > 0 and self.tx_distance > 0):
            raise ValueError("path distances must be positive")
        for name in ("aoa_angle", "aod_angle"):
            phi = getattr(self, name)
            if not -np.pi / 2 < phi < np.pi / 2:
                raise ValueError(f"{name}={phi} outside (-pi/2, pi/2)")


@dataclass
class ChannelRealization:
    matrix: np.ndarray
    paths: list[PathComponent]
    geometry_rx: ArrayGeometry
    geometry_tx: ArrayGeometry

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


@dataclass
class DatasetConfig:
    """Dataset generation parameters (defaults are the full-scale setup)."""

    Nr: int = 256
    Nt: int = 8
    carrier_freq: float = 60e9
    mean_paths: float = 6.0
    angle_bound: float = np.pi / 3
    distance_range: tuple[float, float] | None = None
    snr_set: list[float] = field(default_factory=lambda: [-10.0, -5.0, 0.0, 5.0, 10.0])
    sample_count: int = 1000
    split_ratio: tuple[int, int] = (4, 1)
    seed: int = 0
    pilot_power: float = 1.0

    def __post_init__(self):
        if self.distance_range is None:
            self.distance_range = (3.0, rayleigh_distance(self.rx_geometry(), self.tx_geometry()))
        self.distance_range = (float(self.distance_range[0]), float(self.distance_range[1]))
        self.split_ratio = (int(self.split_ratio[0]), int(self.split_ratio[1]))
        self.snr_set = [float(s) for s in self.snr_set]
        r_min, r_max = self.distance_range
        if not r_min > 0:
            raise ValueError(f"r_min must be positive, got {r_min}")
        if r_max < r_min:
            raise ValueError(f"r_max={r_max} < r_min={r_min}")
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")
        if self.mean_paths <= 0:
            raise ValueError("mean_paths must be positive")
        if min(self.split_ratio) < 0 or sum(self.split_ratio) == 0:
            raise ValueError(f"invalid split_ratio {self.split_ratio}")
        if not self.snr_set:
            raise ValueError("snr_set is empty")

    def rx_geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.Nr, self.carrier_freq)

    def tx_geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.Nt, self.carrier_freq)

    def split_counts(self) -> tuple[int, int]:
        a, b = self.split_ratio
        n_train = (self.sample_count * a) // (a + b)
        return n_train, self.sample_count - n_train

    def to_dict(self) -> dict:
        return {
            "Nr": self.Nr,
            "Nt": self.Nt,
            "carrier_freq": self.carrier_freq,
            "mean_paths": self.mean_paths,
            "angle_bound": self.angle_bound,
            "distance_range": list(self.distance_range),
            "snr_set": list(self.snr_set),
            "sample_count": self.sample_count,
            "split_ratio": list(self.split_ratio),
            "seed": self.seed,
            "pilot_power": self.pilot_power,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def rayleigh_distance(rx: ArrayGeometry, tx: ArrayGeometry) -> float:
    """MIMO Rayleigh distance ``2 (D_r + D_t)^2 / lambda`` with ``D = N d``."""
    if rx.carrier_freq != tx.carrier_freq:
        raise ValueError("rx and tx must share the carrier frequency")
    return 2.0 * (rx.aperture + tx.aperture) ** 2 / rx.wavelength


def element_distance(r, theta, d, n, exact=False):
    """Distance from a source at ``(theta, r)`` to element ``n`` of a ULA.

    By default the second-order expansion
    ``r + (1 - theta^2) d^2 n^2 / (2 r) - n d theta`` is returned. With
    ``exact=True`` the law-of-cosines value is returned instead.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("distance r must be positive")
    theta = np.asarray(theta, dtype=float)
    n = np.asarray(n, dtype=float)
    if exact:
        return np.sqrt(r**2 + (n * d) ** 2 - 2.0 * r * n * d * theta)
    return r + (1.0 - theta**2) / (2.0 * r) * d**2 * n**2 - n * d * theta


def steering_vector(geom: ArrayGeometry, theta: float, r: float) -> np.ndarray:
    """Unit-norm near-field array response ``exp(-j 2pi/lambda (r_n - r)) / sqrt(N)``.

    ``r = np.inf`` yields the planar-wavefront (far-field) phase ramp.
    """
    n = np.arange(geom.num_elements)
    k = 2.0 * np.pi / geom.wavelength
    d = geom.element_spacing
    if np.isinf(r) and r > 0:
        delta = -n * d * theta
    else:
        if not r > 0:
            raise ValueError("distance r must be positive")
        # r_n - r formed directly; subtracting r from element_distance loses
        # every significant digit of the curvature term at large r
        delta = (1.0 - theta**2) / (2.0 * r) * d**2 * n**2 - n * d * theta
    return np.exp(-1j * k * delta) / np.sqrt(geom.num_elements)


def channel_matrix(
    paths: list[PathComponent], rx: ArrayGeometry, tx: ArrayGeometry
) -> ChannelRealization:
    if len(paths) == 0:
        raise ValueError("channel_matrix needs at least one path")
    L = len(paths)
    A_r = np.stack([steering_vector(rx, np.sin(p.aoa_angle), p.rx_distance) for p in paths], axis=1)
    A_t = np.stack([steering_vector(tx, np.sin(p.aod_angle), p.tx_distance) for p in paths], axis=1)
    gains = np.array([p.gain for p in paths], dtype=complex)
    scale = np.sqrt(rx.num_elements * tx.num_elements / L)
    H = scale * (A_r * gains) @ A_t.conj().T
    return ChannelRealization(H, list(paths), rx, tx)


def sample_paths(cfg: DatasetConfig, rng: np.random.Generator) -> list[PathComponent]:
    """Draw one multipath realization.

    ``L ~ Poisson(mean_paths)`` clamped to at least one path; the clamp adds
    ``mean_paths * P(L=0)``-ish bias (about +0.015 for a mean of 6).
    """
    L = max(1, int(rng.poisson(cfg.mean_paths)))
    r_min, r_max = cfg.distance_range
    # open interval keeps the PathComponent angle invariant when the bound is pi/2
    bound = min(cfg.angle_bound, np.nextafter(np.pi / 2, 0))
    aoa = rng.uniform(-bound, bound, L)
    aod = rng.uniform(-bound, bound, L)
    r_r = rng.uniform(r_min, r_max, L)
    r_t = rng.uniform(r_min, r_max, L)
    g = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2.0)
    return [
        PathComponent(complex(g[i]), float(aoa[i]), float(aod[i]), float(r_r[i]), float(r_t[i]))
        for i in range(L)
    ]
