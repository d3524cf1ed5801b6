"""
Spatial antenna correlation of near-field ULA channels.

Two one-dimensional slices of ``R = E[a(theta, r) a(theta, r)^H]``:

* angular domain, fixed distance ``r0``, subpath angle offsets drawn from a
  truncated Laplacian power angle spectrum -> closed form;
* distance domain, fixed angle, distance offsets drawn from an exponential
  power delay profile -> numerical quadrature.

Both are cross-checked against a direct Monte-Carlo average of steering
vector outer products.

The analytical expressions assume half-wavelength spacing, where the
steering phase reads ``pi * ((1 - theta^2) d n^2 / (2 r) - theta n)`` with
``d`` in meters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .channel import ArrayGeometry

# domain truncation for the exponential PDP integral: exp(-40) ~ 4e-18
PDP_TRUNCATION = 40.0
QUAD_ABS_TOL = 1e-8


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class AngularSpreadModel:
    mean_angle: float
    sigma_phi: float
    fixed_distance: float

    def __post_init__(self):
        if not self.sigma_phi > 0:
            raise ValueError("sigma_phi must be positive")
        if not self.fixed_distance > 0:
            raise ValueError("fixed_distance must be positive")


@dataclass(frozen=True)
class DistanceSpreadModel:
    mean_distance: float
    sigma_psi: float
    fixed_theta: float

    def __post_init__(self):
        if not self.sigma_psi > 0:
            raise ValueError("sigma_psi must be positive")
        if not self.mean_distance > 0:
            raise ValueError("mean_distance must be positive")


@dataclass
class CorrelationMatrix:
    values: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.provenance not in ("closed-form", "quadrature", "monte-carlo"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def _laplace_rate(sigma_phi: float) -> float:
    if not sigma_phi > 0:
        raise ValueError("sigma_phi must be positive")
    return np.sqrt(2.0) / sigma_phi


def pas_pdf(phi, sigma_phi):
    """Truncated Laplacian power angle spectrum on ``[-pi, pi)``."""
    a = _laplace_rate(sigma_phi)
    beta = 1.0 / (-np.expm1(-a * np.pi))
    phi = np.asarray(phi, dtype=float)
    inside = (phi >= -np.pi) & (phi < np.pi)
    return np.where(inside, beta * a / 2.0 * np.exp(-a * np.abs(phi)), 0.0)


def pdp_pdf(psi, sigma_psi):
    """Exponential distance-offset density ``exp(-psi / sigma) / sigma`` for ``psi > 0``."""
    if not sigma_psi > 0:
        raise ValueError("sigma_psi must be positive")
    psi = np.asarray(psi, dtype=float)
    safe = np.where(psi > 0, psi, 0.0)
    return np.where(psi > 0, np.exp(-safe / sigma_psi) / sigma_psi, 0.0)


def sample_pas(sigma_phi: float, size, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from the truncated Laplacian (magnitude, then a fair sign)."""
    a = _laplace_rate(sigma_phi)
    u = rng.random(size)
    mag = -np.log1p(u * np.expm1(-a * np.pi)) / a
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * mag


def sample_pdp(sigma_psi: float, size, rng: np.random.Generator) -> np.ndarray:
    if not sigma_psi > 0:
        raise ValueError("sigma_psi must be positive")
    return -sigma_psi * np.log1p(-rng.random(size))


def omega_coeff(m, n, mean_angle, r0, d, flip_sign=False):
    """Spatial phase coefficient multiplying the angle offset.

    First-order expansion of the correlation phase around ``mean_angle``:
    ``pi (m-n) cos(phi0) + pi d (m^2-n^2) sin(2 phi0) / (2 r0)``.
    ``flip_sign=True`` flips the second term (a sign that disagrees with
    Monte-Carlo simulation, kept for comparison).
    ``r0 = inf`` keeps only the planar-wavefront term.
    """
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    far = np.pi * (m - n) * np.cos(mean_angle)
    if np.isinf(r0):
        return far + 0.0 * (m * m)
    near = np.pi * d * (m**2 - n**2) * np.sin(2.0 * mean_angle) / (2.0 * r0)
    return far - near if flip_sign else far + near


def b_theta_from_omega(omega, sigma_phi):
    """Closed-form ``sqrt(2) beta / sigma * int_0^pi exp(-sqrt(2) phi / sigma) cos(omega phi) dphi``."""
    a = _laplace_rate(sigma_phi)
    beta = 1.0 / (-np.expm1(-a * np.pi))
    w = np.asarray(omega, dtype=float)
    tail = np.exp(-a * np.pi) * (-a * np.cos(np.pi * w) + w * np.sin(np.pi * w))
    return np.sqrt(2.0) * sigma_phi * beta / (2.0 + sigma_phi**2 * w**2) * (tail + a)


def b_theta_from_omega_unnormalized(omega, sigma_phi):
    """The same expression with the ``2 + sigma * omega^2`` denominator.

    Kept only for comparison; it is not normalized (value at omega=0 is 1
    but it drifts from the integral everywhere else).
    """
    a = _laplace_rate(sigma_phi)
    beta = 1.0 / (-np.expm1(-a * np.pi))
    w = np.asarray(omega, dtype=float)
    tail = np.exp(-a * np.pi) * (-a * np.cos(np.pi * w) + w * np.sin(np.pi * w))
    return np.sqrt(2.0) * sigma_phi * beta / (2.0 + sigma_phi * w**2) * (tail + a)


def b_theta_quadrature(omega: float, sigma_phi: float) -> float:
    """Reference value of the angular integral via QUADPACK's cosine-weighted rule."""
    a = _laplace_rate(sigma_phi)
    beta = 1.0 / (-np.expm1(-a * np.pi))
    a = float(a)
    if omega == 0:
        val, _ = integrate.quad(lambda p: math.exp(-a * p), 0.0, math.pi, epsabs=1e-13, epsrel=1e-13)
    else:
        # scalar math.exp keeps the per-node callback cheap
        val, _ = integrate.quad(
            lambda p: math.exp(-a * p), 0.0, math.pi, weight="cos", wvar=float(omega),
            epsabs=1e-13, epsrel=1e-13, limit=200,
        )
    return float(a * beta * val)


def b_theta_closed(m, n, model: AngularSpreadModel, d, flip_sign=False):
    w = omega_coeff(m, n, model.mean_angle, model.fixed_distance, d, flip_sign=flip_sign)
    return b_theta_from_omega(w, model.sigma_phi)


def _index_grid(N):
    idx = np.arange(N, dtype=float)
    return idx[:, None], idx[None, :]


def r_theta_phase(N, mean_angle, r0, d):
    m, n = _index_grid(N)
    th = np.sin(mean_angle)
    arg = (m - n) * th
    if not np.isinf(r0):
        arg = arg - d * (1.0 - th**2) * (m**2 - n**2) / (2.0 * r0)
    return np.exp(1j * np.pi * arg)


def r_theta_closed(model: AngularSpreadModel, geom: ArrayGeometry, flip_sign=False) -> CorrelationMatrix:
    """Angular-domain correlation ``phase(m, n) * B_theta(m, n)``."""
    N, d = geom.num_elements, geom.element_spacing
    m, n = _index_grid(N)
    B = b_theta_closed(m, n, model, d, flip_sign=flip_sign)
    R = r_theta_phase(N, model.mean_angle, model.fixed_distance, d) * B
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(R, "closed-form")


def b_r_quadrature(m, n, model: DistanceSpreadModel, d, abs_tol=QUAD_ABS_TOL) -> complex:
    """``int_0^inf exp(-psi/sigma) exp(-j c / (r0 + psi)) dpsi`` with ``c = pi d (1-theta^2)(m^2-n^2)/2``.

    Adaptive Gauss-Kronrod on ``[0, 40 sigma]``; raises :class:`QuadratureError`
    if the requested absolute tolerance is not met.
    """
    s, r0 = model.sigma_psi, model.mean_distance
    c = np.pi * d * (1.0 - model.fixed_theta**2) * (float(m) ** 2 - float(n) ** 2) / 2.0
    if c == 0.0:
        return complex(s)
    hi = PDP_TRUNCATION * s
    # spread the oscillation over enough subintervals for large c / r0
    limit = 200 + int(min(5e4, abs(c) / r0 * 4))
    with warnings.catch_warnings():
        # non-convergence is reported through the error estimate below
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        re, err_re = integrate.quad(lambda p: np.exp(-p / s) * np.cos(c / (r0 + p)), 0.0, hi,
                                    epsabs=abs_tol / 4, epsrel=0.0, limit=limit)
        im, err_im = integrate.quad(lambda p: -np.exp(-p / s) * np.sin(c / (r0 + p)), 0.0, hi,
                                    epsabs=abs_tol / 4, epsrel=0.0, limit=limit)
    err = np.hypot(err_re, err_im)
    if not err <= abs_tol:
        raise QuadratureError(f"B_r quadrature reached only {err:.2e} (requested {abs_tol:.0e})")
    return complex(re, im)


def b_r_simpson(m, n, model: DistanceSpreadModel, d, points=200_001) -> complex:
    """Fixed-step composite Simpson on ``[0, 40 sigma]``; an independent cross-check for :func:`b_r_quadrature`."""
    s, r0 = model.sigma_psi, model.mean_distance
    c = np.pi * d * (1.0 - model.fixed_theta**2) * (float(m) ** 2 - float(n) ** 2) / 2.0
    psi = np.linspace(0.0, PDP_TRUNCATION * s, points)
    f = np.exp(-psi / s) * np.exp(-1j * c / (r0 + psi))
    return complex(integrate.simpson(f, x=psi))


def r_r(model: DistanceSpreadModel, geom: ArrayGeometry) -> CorrelationMatrix:
    """Distance-domain correlation ``K_r exp(j pi (m-n) theta0) B_r(m, n)``.

    ``B_r`` depends on ``(m, n)`` only through ``m^2 - n^2``, so each distinct
    value is integrated once and the lower triangle is filled by conjugation.
    """
    N, d = geom.num_elements, geom.element_spacing
    K = 1.0 / model.sigma_psi
    cache: dict[int, complex] = {}
    R = np.empty((N, N), dtype=complex)
    th = model.fixed_theta
    for m in range(N):
        R[m, m] = 1.0
        for n in range(m):
            key = m * m - n * n
            if key not in cache:
                cache[key] = b_r_quadrature(m, n, model, d)
            R[m, n] = K * np.exp(1j * np.pi * (m - n) * th) * cache[key]
            R[n, m] = np.conj(R[m, n])
    return CorrelationMatrix(R, "quadrature")


def corr_monte_carlo(
    mean_angle: float,
    sigma_phi: float,
    mean_distance: float,
    sigma_psi: float,
    geom: ArrayGeometry,
    draws: int,
    rng: np.random.Generator,
    chunk: int = 20_000,
) -> CorrelationMatrix:
    """Sample average of ``a a^H`` with ``phi0 = mean - phi`` and ``r0 = mean + psi``.

    ``sigma_phi = 0`` or ``sigma_psi = 0`` pins that coordinate to its mean.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    N = geom.num_elements
    acc = np.zeros((N, N), dtype=complex)
    done = 0
    while done < draws:
        k = min(chunk, draws - done)
        phi = sample_pas(sigma_phi, k, rng) if sigma_phi > 0 else np.zeros(k)
        psi = sample_pdp(sigma_psi, k, rng) if sigma_psi > 0 else np.zeros(k)
        theta = np.sin(mean_angle - phi)
        r = mean_distance + psi
        A = _steering_block(geom, theta, r)
        acc += A @ A.conj().T
        done += k
    # correlation entries carry no 1/N: |a_m a_n^*| = 1/N per draw
    R = N * acc / draws
    R = (R + R.conj().T) / 2
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(R, "monte-carlo")


def _steering_block(geom: ArrayGeometry, theta: np.ndarray, r: np.ndarray) -> np.ndarray:
    n = np.arange(geom.num_elements)[:, None]
    d = geom.element_spacing
    k = 2.0 * np.pi / geom.wavelength
    curv = np.where(np.isinf(r), 0.0, (1.0 - theta**2) / (2.0 * np.where(np.isinf(r), 1.0, r)))
    delta = curv[None, :] * d**2 * n**2 - n * d * theta[None, :]
    return np.exp(-1j * k * delta) / np.sqrt(geom.num_elements)


def frobenius_gap(A, B) -> float:
    A = A.values if isinstance(A, CorrelationMatrix) else A
    B = B.values if isinstance(B, CorrelationMatrix) else B
    return float(np.linalg.norm(A - B) / np.linalg.norm(B))


def omega_sweep(N, center, mean_angle, r0, d, flip_sign=False):
    """Near- and far-field phase coefficients across elements against a fixed ``center`` element."""
    m = np.arange(N)
    return m, omega_coeff(m, center, mean_angle, r0, d, flip_sign), omega_coeff(m, center, mean_angle, np.inf, d)


def distance_sweep(m, n, model: DistanceSpreadModel, d, r0_values):
    """``K_r |B_r(m, n)|`` over a list of mean distances."""
    out = []
    for r0 in r0_values:
        mdl = DistanceSpreadModel(float(r0), model.sigma_psi, model.fixed_theta)
        out.append(abs(b_r_quadrature(m, n, mdl, d)) / model.sigma_psi)
    return np.asarray(out)
