"""
Pilot observation model and classical channel estimators.

The received pilot block is ``Y = W^H H F S + W^H N`` with combiner ``W``
(Nr x Mr), precoder ``F`` (Nt x Mt) and diagonal pilot symbols ``S``.
Vectorization is column-major throughout, so that

    vec(Y) = (F^T kron W^H) vec(H S-scaled) + vec(V).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayGeometry, ChannelRealization, steering_vector


def vec(A: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(A).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape((rows, cols), order="F")


@dataclass
class BeamConfig:
    combiner: np.ndarray
    precoder: np.ndarray
    pilot_power: float = 1.0
    pilot_symbols: np.ndarray | None = None

    def __post_init__(self):
        W, F = self.combiner, self.precoder
        if W.shape[1] > W.shape[0] or F.shape[1] > F.shape[0]:
            raise ValueError("beam count exceeds antenna count")
        for name, M in (("combiner", W), ("precoder", F)):
            dev = np.max(np.abs(np.linalg.norm(M, axis=0) - 1.0))
            if dev > 1e-10:
                raise ValueError(f"{name} columns are not unit norm (max deviation {dev:.2e})")
        if self.pilot_symbols is None:
            self.pilot_symbols = np.sqrt(self.pilot_power) * np.ones(F.shape[1])
        self.pilot_symbols = np.asarray(self.pilot_symbols, dtype=complex).reshape(-1)
        if self.pilot_symbols.shape[0] != F.shape[1]:
            raise ValueError("pilot_symbols length must equal the number of transmit beams")

    @property
    def Mr(self) -> int:
        return self.combiner.shape[1]

    @property
    def Mt(self) -> int:
        return self.precoder.shape[1]

    def sensing_matrix(self) -> np.ndarray:
        """``Q = F^T kron W^H`` (Mt*Mr x Nt*Nr)."""
        return np.kron(self.precoder.T, self.combiner.conj().T)

    def is_unitary(self, tol: float = 1e-10) -> bool:
        W, F = self.combiner, self.precoder
        if W.shape[0] != W.shape[1] or F.shape[0] != F.shape[1]:
            return False
        eye_r = np.eye(W.shape[0])
        eye_t = np.eye(F.shape[0])
        return bool(
            np.max(np.abs(W.conj().T @ W - eye_r)) < tol
            and np.max(np.abs(F.conj().T @ F - eye_t)) < tol
        )


@dataclass
class PilotObservation:
    Y: np.ndarray
    beams: BeamConfig
    noise_power: float

    def __post_init__(self):
        if self.noise_power < 0:
            raise ValueError("noise_power must be non-negative")


def dft_matrix(N: int, M: int | None = None) -> np.ndarray:
    """First ``M`` columns of the unit-column-norm DFT matrix."""
    M = N if M is None else M
    n = np.arange(N)[:, None]
    m = np.arange(M)[None, :]
    return np.exp(-2j * np.pi * n * m / N) / np.sqrt(N)


def make_beams(Nr, Nt, Mr=None, Mt=None, pilot_power=1.0, kind="dft") -> BeamConfig:
    Mr = Nr if Mr is None else Mr
    Mt = Nt if Mt is None else Mt
    if not (1 <= Mr <= Nr and 1 <= Mt <= Nt):
        raise ValueError(f"need 1 <= Mr <= Nr and 1 <= Mt <= Nt, got Mr={Mr}, Mt={Mt}")
    if kind == "dft":
        W, F = dft_matrix(Nr, Mr), dft_matrix(Nt, Mt)
    elif kind == "identity-subset":
        W = np.eye(Nr, Mr, dtype=complex)
        F = np.eye(Nt, Mt, dtype=complex)
    else:
        raise ValueError(f"unknown beam kind {kind!r}")
    return BeamConfig(W, F, pilot_power)


def observe(H, beams: BeamConfig, noise_power: float, rng: np.random.Generator) -> PilotObservation:
    """Simulate one pilot block. Noise is drawn per transmit beam as CN(0, noise_power I_Nr)."""
    H = H.matrix if isinstance(H, ChannelRealization) else np.asarray(H)
    W, F = beams.combiner, beams.precoder
    if H.shape != (W.shape[0], F.shape[0]):
        raise ValueError(f"channel shape {H.shape} does not match beams {(W.shape[0], F.shape[0])}")
    Y = W.conj().T @ H @ F * beams.pilot_symbols[None, :]
    if noise_power > 0:
        shape = (W.shape[0], beams.Mt)
        N = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(noise_power / 2)
        Y = Y + W.conj().T @ N
    return PilotObservation(Y, beams, float(noise_power))


def ls_estimate(obs: PilotObservation) -> np.ndarray:
    """Least-squares channel estimate.

    Unitary beams take the fast path ``W Y S^-1 F^H``; anything else goes
    through the normal equations on ``Q = F^T kron W^H`` and requires
    ``Q`` to have full column rank.
    """
    b = obs.beams
    Nr, Nt = b.combiner.shape[0], b.precoder.shape[0]
    if b.is_unitary():
        return b.combiner @ (obs.Y / b.pilot_symbols[None, :]) @ b.precoder.conj().T
    if b.Mt * b.Mr < Nt * Nr:
        raise np.linalg.LinAlgError(
            f"LS is underdetermined: Mt*Mr={b.Mt * b.Mr} < Nt*Nr={Nt * Nr}"
        )
    Q = b.sensing_matrix()
    rank = np.linalg.matrix_rank(Q)
    if rank < Nt * Nr:
        raise np.linalg.LinAlgError(f"sensing matrix is rank deficient ({rank} < {Nt * Nr})")
    y = vec(obs.Y / b.pilot_symbols[None, :])
    h = np.linalg.solve(Q.conj().T @ Q, Q.conj().T @ y)
    return unvec(h, Nr, Nt)


def ls_error_covariance(beams: BeamConfig, noise_power: float) -> np.ndarray:
    """Covariance of the LS estimation error ``vec(H_ls - H)``."""
    Nr, Nt = beams.combiner.shape[0], beams.precoder.shape[0]
    if beams.is_unitary() and np.allclose(np.abs(beams.pilot_symbols), np.abs(beams.pilot_symbols[0])):
        return noise_power / np.abs(beams.pilot_symbols[0]) ** 2 * np.eye(Nr * Nt)
    W = beams.combiner
    Q = beams.sensing_matrix() * np.repeat(beams.pilot_symbols, beams.Mr)[:, None]
    G = np.linalg.inv(Q.conj().T @ Q) @ Q.conj().T
    noise_cov = noise_power * np.kron(np.eye(beams.Mt), W.conj().T @ W)
    return G @ noise_cov @ G.conj().T


def fit_channel_covariance(samples) -> np.ndarray:
    """Sample covariance ``(1/K) sum vec(H) vec(H)^H`` (Hermitian by construction)."""
    mats = [s.matrix if isinstance(s, ChannelRealization) else np.asarray(s) for s in samples]
    if not mats:
        raise ValueError("need at least one channel sample")
    V = np.stack([vec(H) for H in mats], axis=1)
    R = V @ V.conj().T / V.shape[1]
    return (R + R.conj().T) / 2


def lmmse_estimate(obs: PilotObservation, R_hh: np.ndarray) -> np.ndarray:
    """LMMSE refinement of the LS estimate given the channel covariance ``R_hh``."""
    H_ls = ls_estimate(obs)
    Nr, Nt = H_ls.shape
    C_e = ls_error_covariance(obs.beams, obs.noise_power)
    A = R_hh + C_e
    try:
        x = np.linalg.solve(A, vec(H_ls))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("regularized covariance is singular") from exc
    return unvec(R_hh @ x, Nr, Nt)


@dataclass
class PolarDictionary:
    """Steering-vector dictionary on an (angle, distance) grid.

    Columns are ordered distance-major: atom ``k`` corresponds to
    ``grid[k] = (theta, r)``; ``r = inf`` marks planar-wavefront atoms.
    """

    atoms: np.ndarray
    grid: list[tuple[float, float]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.atoms.shape[1]


def default_distance_grid(rayleigh: float, r_min: float) -> list[float]:
    """``{inf, d_R/2, d_R/4, d_R/8, d_R/16, r_min}`` restricted to ``>= r_min``, descending."""
    rs = [rayleigh / 2**k for k in range(1, 5)]
    rs = [r for r in rs if r > r_min] + [r_min]
    return [np.inf] + sorted(set(rs), reverse=True)


def build_polar_dictionary(geom: ArrayGeometry, angle_grid_size: int, distance_grid) -> PolarDictionary:
    if angle_grid_size < 1 or len(distance_grid) < 1:
        raise ValueError("grid sizes must be >= 1")
    G = angle_grid_size
    thetas = -1.0 + (2.0 * np.arange(G) + 1.0) / G
    cols, grid = [], []
    for r in distance_grid:
        for th in thetas:
            cols.append(steering_vector(geom, th, r))
            grid.append((float(th), float(r)))
    return PolarDictionary(np.stack(cols, axis=1), grid)


def mutual_coherence(D: PolarDictionary) -> float:
    G = np.abs(D.atoms.conj().T @ D.atoms)
    np.fill_diagonal(G, 0.0)
    return float(G.max())


def omp_estimate(
    obs: PilotObservation,
    dict_rx: PolarDictionary,
    dict_tx: PolarDictionary,
    max_paths: int = 12,
    residual_tol: float = 1e-2,
    return_trace: bool = False,
):
    """Greedy sparse recovery over Kronecker atoms ``conj(t_j) kron r_i``.

    Each iteration picks the sensed atom with the largest normalized
    correlation against the residual (ties go to the lowest atom index,
    ``i * Gt + j``), then refits all selected coefficients by least squares.
    Stops after ``max_paths`` atoms or when ``||res|| <= residual_tol * ||y||``.

    With ``return_trace=True`` also returns a dict with the selected atom
    indices and the residual norm after each iteration.
    """
    if dict_rx.size == 0 or dict_tx.size == 0:
        raise ValueError("empty dictionary")
    b = obs.beams
    Nr, Nt = b.combiner.shape[0], b.precoder.shape[0]
    if dict_rx.atoms.shape[0] != Nr or dict_tx.atoms.shape[0] != Nt:
        raise ValueError("dictionary dimensions do not match the array sizes")
    # sensed factors: Q (conj(t) kron r) = (F^T conj(t)) kron (W^H r)
    Phi_r = b.combiner.conj().T @ dict_rx.atoms
    Phi_t = b.precoder.T @ dict_tx.atoms.conj()
    Rmat = obs.Y / b.pilot_symbols[None, :]
    y = vec(Rmat)
    norms = np.outer(np.linalg.norm(Phi_r, axis=0), np.linalg.norm(Phi_t, axis=0))
    norms[norms == 0] = np.inf
    Gt = dict_tx.size
    y_norm = np.linalg.norm(y)
    selected: list[int] = []
    residual_norms = [float(y_norm)]
    coef = np.zeros(0, dtype=complex)
    A = np.zeros((y.size, 0), dtype=complex)
    res = Rmat
    for _ in range(max_paths):
        if y_norm == 0 or np.linalg.norm(res) <= residual_tol * y_norm:
            break
        scores = np.abs(Phi_r.conj().T @ res @ Phi_t.conj()) / norms
        k = int(np.argmax(scores))
        if k in selected:
            break
        i, j = divmod(k, Gt)
        selected.append(k)
        A = np.column_stack([A, np.kron(Phi_t[:, j], Phi_r[:, i])])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        res = unvec(y - A @ coef, b.Mr, b.Mt)
        residual_norms.append(float(np.linalg.norm(res)))
    H = np.zeros((Nr, Nt), dtype=complex)
    for c, k in zip(coef, selected):
        i, j = divmod(k, Gt)
        H += c * np.outer(dict_rx.atoms[:, i], dict_tx.atoms[:, j].conj())
    if return_trace:
        return H, {"selected": selected, "residual_norms": residual_norms, "sensed": A, "residual": vec(res)}
    return H
