"""
Training loop, learning-rate schedule, metrics and estimator evaluation.

Run directory layout written by :func:`train`::

    <out_dir>/<variant>/loss.csv     epoch,lr,train_loss,test_loss
    <out_dir>/<variant>/best.nfpt    parameters with the lowest test loss
    <out_dir>/<variant>/model.json   network + training configuration

Evaluation writes ``method,snr_db,nmse_linear,nmse_db,se_bits,samples,seconds``.
The ``seconds`` column is 0 unless timing is requested, so that repeated
runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mssan
from .autograd import ops
from .autograd.params import ParamStore, clip_grad_norm, load_checkpoint, save_checkpoint, sgd_momentum_step
from .autograd.tensor import Tensor, default_dtype, no_grad
from .channel import ArrayGeometry, DatasetConfig, channel_matrix, rayleigh_distance, sample_paths
from .dataset import load_split, sample_rng, snr_to_noise_power, to_features
from .pilots import (
    build_polar_dictionary,
    default_distance_grid,
    fit_channel_covariance,
    lmmse_estimate,
    ls_estimate,
    make_beams,
    observe,
    omp_estimate,
)

LOSS_HEADER = ("epoch", "lr", "train_loss", "test_loss")
METRIC_HEADER = ("method", "snr_db", "nmse_linear", "nmse_db", "se_bits", "samples", "seconds")
CLASSICAL = ("ls", "lmmse", "omp")
LEARNED = mssan.VARIANTS
METHODS = CLASSICAL + LEARNED

# keeps evaluation noise streams apart from the generation streams keyed (seed, i)
_EVAL_STREAM = 0x45564131
_TRAIN_STREAM = 0x54524E31


class DegenerateEstimateError(ValueError):
    """Raised when a metric is undefined for an all-zero estimate."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    variant: str = "mssan"
    dataset: str = "data"
    snr_set: list[float] = field(default_factory=lambda: [-10.0, -5.0, 0.0, 5.0, 10.0])
    out_dir: str = "runs"
    profile: str = "desk"
    network: dict = field(default_factory=dict)
    resample_noise: bool = False
    input_scaling: bool = True
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive or None")
        if self.variant not in LEARNED:
            raise ValueError(f"variant must be one of {LEARNED}, got {self.variant!r}")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {tuple(PROFILES)}, got {self.profile!r}")
        self.snr_set = [float(s) for s in self.snr_set]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def network_config(self, Nr: int, Nt: int) -> mssan.NetworkConfig:
        base = PROFILES[self.profile]["network"](self.variant, Nr, Nt).to_dict()
        base.update(self.network)
        base.update(variant=self.variant, Nr=Nr, Nt=Nt, input_scaling=self.input_scaling)
        return mssan.NetworkConfig.from_dict(base)


@dataclass
class MetricRecord:
    method: str
    snr_db: float
    nmse_linear: float
    se_bits: float
    samples: int
    seconds: float = 0.0

    @property
    def nmse_db(self) -> float:
        return 10.0 * math.log10(self.nmse_linear) if self.nmse_linear > 0 else -math.inf

    def row(self) -> list[str]:
        return [
            self.method,
            f"{self.snr_db:g}",
            f"{self.nmse_linear:.10e}",
            f"{self.nmse_db:.6f}",
            f"{self.se_bits:.6f}",
            str(self.samples),
            f"{self.seconds:.3f}",
        ]


# -- profiles ------------------------------------------------------------------


def desk_dataset_config(seed: int = 0) -> DatasetConfig:
    """Nr=32, Nt=4, 2000 samples.

    At 60 GHz the 32x4 link has a Rayleigh distance of about 3.2 m, so users
    are placed between 0.5 m and that distance to stay in the near field.
    """
    d_r = rayleigh_distance(ArrayGeometry(32, 60e9), ArrayGeometry(4, 60e9))
    return DatasetConfig(Nr=32, Nt=4, sample_count=2000, seed=seed, distance_range=(0.5, d_r))


def full_dataset_config(seed: int = 0) -> DatasetConfig:
    return DatasetConfig(Nr=256, Nt=8, sample_count=1000, seed=seed)


PROFILES = {
    "desk": {
        "dataset": desk_dataset_config,
        "network": mssan.desk_config,
        "train": dict(epochs=30, batch_size=16, base_lr=0.1, momentum=0.9, weight_decay=1e-4, resample_noise=True),
    },
    "full": {
        "dataset": full_dataset_config,
        "network": mssan.full_config,
        "train": dict(epochs=120, batch_size=32, base_lr=0.1, momentum=0.9, weight_decay=1e-4),
    },
}


def profile_train_config(profile: str = "desk", **overrides) -> TrainConfig:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    kw = dict(PROFILES[profile]["train"], profile=profile)
    kw.update(overrides)
    return TrainConfig(**kw)


# -- schedule ------------------------------------------------------------------


def lr_schedule(t: int, base_lr: float, epochs: int) -> float:
    """Warmup ``base_lr / (6 - t)`` for epochs 1..5, cosine annealing afterwards."""
    if not 1 <= t <= epochs:
        raise ValueError(f"epoch {t} outside 1..{epochs}")
    if t <= 5:
        return base_lr / (6 - t)
    return 0.5 * base_lr * (1.0 + math.cos((t - 5) * math.pi / (epochs - 4)))


def warmup_jump_bound(base_lr: float, epochs: int) -> float:
    """Size of the step from epoch 5 to epoch 6, ``(base_lr/2)(1 - cos(pi/(T-4)))``."""
    return 0.5 * base_lr * (1.0 - math.cos(math.pi / (epochs - 4)))


# -- metrics -------------------------------------------------------------------


def nmse_per_sample(H_true, H_est) -> np.ndarray:
    """``||H - H_est||_F^2 / ||H||_F^2`` for each sample of a (K, Nr, Nt) stack."""
    H_true = np.asarray(H_true)
    H_est = np.asarray(H_est)
    if H_true.shape != H_est.shape:
        raise ValueError(f"shape mismatch {H_true.shape} vs {H_est.shape}")
    if H_true.ndim == 2:
        H_true, H_est = H_true[None], H_est[None]
    power = np.sum(np.abs(H_true) ** 2, axis=(-2, -1))
    if np.any(power == 0):
        raise ValueError("true channel has zero norm")
    return np.sum(np.abs(H_true - H_est) ** 2, axis=(-2, -1)) / power


def nmse(H_true, H_est) -> float:
    """Mean over samples of the per-sample error-to-signal ratio (linear)."""
    return float(np.mean(nmse_per_sample(H_true, H_est)))


def to_db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


def spectral_efficiency(H_true, H_est, noise_power: float) -> float:
    """Rate of maximum-ratio transmission steered with the estimate.

    ``log2(1 + tr(Hh H^H H Hh^H) / (sigma^2 tr(Hh Hh^H)))`` for a single
    (Nr, Nt) pair.
    """
    H = np.asarray(H_true)
    Hh = np.asarray(H_est)
    if not noise_power > 0:
        raise ValueError("noise power must be positive")
    den = np.real(np.vdot(Hh, Hh))
    if den == 0:
        raise DegenerateEstimateError("spectral efficiency undefined for an all-zero estimate")
    G = H @ Hh.conj().T  # tr(Hh H^H H Hh^H) = ||H Hh^H||_F^2
    num = np.real(np.vdot(G, G))
    return float(np.log2(1.0 + num / (noise_power * den)))


# -- training ------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ParamStore
    network: mssan.NetworkConfig
    curve: list[tuple[int, float, float, float]]
    best_epoch: int
    run_dir: Path


def rms_scale(X: np.ndarray) -> np.ndarray:
    """Per-sample RMS of a ``(B, Nr, Nt, 2)`` stack, shaped for broadcasting (zeros map to 1).

    Networks with ``input_scaling`` see ``X / s`` and their output is
    multiplied back by ``s``; the training target is scaled the same way, so
    the squared error is measured relative to each sample's input power.
    """
    s = np.sqrt(np.mean(np.square(X, dtype=np.float64), axis=(1, 2, 3), keepdims=True))
    return np.where(s > 0, s, 1.0).astype(X.dtype)


def _scaled(X, Y, net):
    if not net.input_scaling:
        return X, Y
    s = rms_scale(X)
    return X / s, Y / s


def _batch_loss(X, Y, params, net, batch_size):
    """Mean per-element squared error over a set, evaluated in fixed-order batches."""
    total, count = 0.0, 0
    with no_grad():
        for s in range(0, len(X), batch_size):
            xb, yb = X[s:s + batch_size], Y[s:s + batch_size]
            out = mssan.forward(Tensor(xb), params, net).data
            total += float(np.sum((out.astype(np.float64) - yb) ** 2))
            count += yb.size
    return total / count


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _format_loss_row(epoch, lr, tr, te):
    return [epoch, f"{lr:.10e}", f"{tr:.10e}", f"{te:.10e}"]


def _fresh_inputs(H, manifest, seed, epoch):
    """New LS inputs for the training channels: same per-sample SNR, new pilot noise."""
    dcfg = DatasetConfig.from_dict(manifest["config"])
    beams = make_beams(dcfg.Nr, dcfg.Nt, pilot_power=dcfg.pilot_power)
    snrs = manifest["train"]["snr_db"]
    out = np.empty_like(H)
    for i in range(len(H)):
        rng = sample_rng(seed, _TRAIN_STREAM, epoch, i)
        out[i] = ls_estimate(observe(H[i], beams, snr_to_noise_power(snrs[i]), rng))
    return out


def train(cfg: TrainConfig, log=None) -> TrainResult:
    """Minimize the mean squared error between network output and ground truth.

    The whole run is a function of ``cfg``: parameter init uses ``cfg.seed``
    and the batch order of epoch ``t`` comes from its own stream keyed by
    ``(seed, t)``.
    """
    train_ds, manifest = load_split(cfg.dataset, "train")
    test_ds, _ = load_split(cfg.dataset, "test")
    if len(train_ds) == 0:
        raise ValueError("training split is empty")
    net = cfg.network_config(train_ds.Nr, train_ds.Nt)
    run_dir = Path(cfg.out_dir) / cfg.variant
    run_dir.mkdir(parents=True, exist_ok=True)

    with default_dtype(np.float32):
        params = mssan.init_params(net, cfg.seed)
        Xtr, Ytr = _scaled(to_features(train_ds.X_in), to_features(train_ds.H_gt), net)
        Xte, Yte = _scaled(to_features(test_ds.X_in), to_features(test_ds.H_gt), net)
        best = params.copy()
        best_loss, best_epoch = math.inf, 0
        curve = []
        for t in range(1, cfg.epochs + 1):
            lr = lr_schedule(t, cfg.base_lr, cfg.epochs)
            if cfg.resample_noise and t > 1:
                Xtr, Ytr = _scaled(to_features(_fresh_inputs(train_ds.H_gt, manifest, cfg.seed, t)),
                                   to_features(train_ds.H_gt), net)
            order = sample_rng(cfg.seed, t).permutation(len(Xtr))
            total = 0.0
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                params.zero_grad()
                loss = ops.mse_loss(mssan.forward(Tensor(Xtr[idx]), params, net), Tensor(Ytr[idx]))
                loss.backward()
                if cfg.clip_norm is not None:
                    clip_grad_norm(params, cfg.clip_norm)
                sgd_momentum_step(params, lr, cfg.momentum, cfg.weight_decay)
                total += loss.item() * len(idx)
            train_loss = total / len(Xtr)
            test_loss = _batch_loss(Xte, Yte, params, net, 2 * cfg.batch_size) if len(Xte) else train_loss
            if not math.isfinite(train_loss):
                raise FloatingPointError(f"training diverged at epoch {t} (lr={lr:g})")
            curve.append((t, lr, train_loss, test_loss))
            if test_loss < best_loss:
                best_loss, best_epoch = test_loss, t
                best = params.copy()
            if log is not None:
                log(f"epoch {t:3d}  lr {lr:.3e}  train {train_loss:.6f}  test {test_loss:.6f}")

    save_checkpoint(best, run_dir / "best.nfpt")
    _write_csv(run_dir / "loss.csv", LOSS_HEADER, [_format_loss_row(*r) for r in curve])
    meta = {
        "network": net.to_dict(),
        "train": cfg.to_dict(),
        "best_epoch": best_epoch,
        "dataset_seed": manifest["seed"],
    }
    (run_dir / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return TrainResult(best, net, curve, best_epoch, run_dir)


def read_loss_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def decreasing_fraction(values) -> float:
    """Share of consecutive steps where ``values`` strictly drops."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 1.0
    return float(np.mean(np.diff(v) < 0))


def load_model(run_dir, variant: str):
    """Read ``(params, network_config)`` from ``<run_dir>/<variant>``."""
    d = Path(run_dir) / variant
    ckpt, meta = d / "best.nfpt", d / "model.json"
    if not ckpt.exists() or not meta.exists():
        raise FileNotFoundError(f"no trained {variant!r} checkpoint under {d}")
    net = mssan.NetworkConfig.from_dict(json.loads(meta.read_text())["network"])
    return load_checkpoint(ckpt), net


# -- evaluation ----------------------------------------------------------------


class Estimators:
    """Per-method estimation functions sharing one geometry and beam setup.

    Learned methods map a stack of LS estimates to refined estimates;
    classical ones work on individual pilot observations.
    """

    def __init__(
        self,
        data_cfg: DatasetConfig,
        train_H=None,
        run_dir=None,
        omp_oversample: int = 2,
        omp_max_paths: int = 12,
        omp_tol: float = 1e-2,
    ):
        self.cfg = data_cfg
        self.beams = make_beams(data_cfg.Nr, data_cfg.Nt, pilot_power=data_cfg.pilot_power)
        self.train_H = train_H
        self.run_dir = run_dir
        self.omp_oversample = omp_oversample
        self.omp_max_paths = omp_max_paths
        self.omp_tol = omp_tol
        self._R = None
        self._dicts = None
        self._models = {}

    def covariance(self):
        if self._R is None:
            if self.train_H is None or len(self.train_H) == 0:
                raise ValueError("LMMSE needs training channels to fit a covariance")
            self._R = fit_channel_covariance(self.train_H)
        return self._R

    def dictionaries(self):
        if self._dicts is None:
            rx, tx = self.cfg.rx_geometry(), self.cfg.tx_geometry()
            grid = default_distance_grid(rayleigh_distance(rx, tx), self.cfg.distance_range[0])
            self._dicts = (
                build_polar_dictionary(rx, self.omp_oversample * rx.num_elements, grid),
                build_polar_dictionary(tx, self.omp_oversample * tx.num_elements, grid),
            )
        return self._dicts

    def model(self, variant):
        if variant not in self._models:
            if self.run_dir is None:
                raise FileNotFoundError(f"{variant!r} needs a run directory with a checkpoint")
            params, net = load_model(self.run_dir, variant)
            if (net.Nr, net.Nt) != (self.cfg.Nr, self.cfg.Nt):
                raise ValueError(f"{variant!r} checkpoint was trained for {(net.Nr, net.Nt)}")
            self._models[variant] = (params, net)
        return self._models[variant]

    def check(self, method):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
        if method == "lmmse":
            self.covariance()
        elif method in LEARNED:
            self.model(method)

    def classical(self, method, obs):
        if method == "ls":
            return ls_estimate(obs)
        if method == "lmmse":
            return lmmse_estimate(obs, self.covariance())
        d_rx, d_tx = self.dictionaries()
        return omp_estimate(obs, d_rx, d_tx, max_paths=self.omp_max_paths, residual_tol=self.omp_tol)

    def learned(self, variant, H_ls, batch_size=64):
        params, net = self.model(variant)
        dtype = next(iter(params.items()))[1].data.dtype
        X = to_features(H_ls, dtype=dtype)
        scale = rms_scale(X) if net.input_scaling else np.ones((len(X), 1, 1, 1), dtype=dtype)
        X = X / scale
        out = np.empty_like(X)
        with no_grad():
            for s in range(0, len(X), batch_size):
                out[s:s + batch_size] = mssan.forward(Tensor(X[s:s + batch_size], dtype=dtype), params, net).data
        out *= scale
        return out[..., 0].astype(np.float64) + 1j * out[..., 1].astype(np.float64)


def evaluate(
    H_test,
    methods,
    snr_set,
    estimators: Estimators,
    seed: int = 0,
    order=None,
    timing: bool = False,
) -> list[MetricRecord]:
    """One record per ``(method, snr)``.

    Every test channel is re-observed at each SNR with noise from the stream
    ``(seed, snr index, sample index)``, and all methods see the same pilot
    observation. Per-sample metrics are stored by sample index and averaged
    in index order, so ``order`` (a permutation of the processing order)
    never changes the result.
    """
    H_test = np.asarray(H_test)
    K = len(H_test)
    if K == 0:
        raise ValueError("empty evaluation set")
    order = np.arange(K) if order is None else np.asarray(order)
    if sorted(order.tolist()) != list(range(K)):
        raise ValueError("order must be a permutation of the sample indices")
    for m in methods:
        estimators.check(m)
    beams = estimators.beams
    records = []
    for si, snr in enumerate(snr_set):
        sigma2 = snr_to_noise_power(snr)
        obs = [None] * K
        for k in order:
            obs[k] = observe(H_test[k], beams, sigma2, sample_rng(seed, _EVAL_STREAM, si, int(k)))
        H_ls = None
        for m in methods:
            t0 = time.perf_counter()
            est = np.empty_like(H_test, dtype=complex)
            if m in LEARNED:
                if H_ls is None:
                    H_ls = np.stack([ls_estimate(o) for o in obs])
                est[order] = estimators.learned(m, H_ls[order])
            else:
                for k in order:
                    est[k] = estimators.classical(m, obs[k])
            err = nmse_per_sample(H_test, est)
            se = np.array([spectral_efficiency(H_test[k], est[k], sigma2) for k in range(K)])
            elapsed = time.perf_counter() - t0 if timing else 0.0
            records.append(MetricRecord(m, float(snr), float(np.mean(err)), float(np.mean(se)), K, elapsed))
    return records


def write_metrics(path, records) -> None:
    _write_csv(Path(path), METRIC_HEADER, [r.row() for r in records])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate_dataset(
    data_dir,
    methods,
    snr_set=None,
    run_dir=None,
    seed: int | None = None,
    timing: bool = False,
) -> list[MetricRecord]:
    """Evaluate on the test split of a generated dataset directory."""
    test_ds, manifest = load_split(data_dir, "test")
    train_ds, _ = load_split(data_dir, "train")
    cfg = DatasetConfig.from_dict(manifest["config"])
    est = Estimators(cfg, train_H=train_ds.H_gt, run_dir=run_dir)
    snr_set = cfg.snr_set if snr_set is None else snr_set
    seed = cfg.seed if seed is None else seed
    return evaluate(test_ds.H_gt, methods, snr_set, est, seed=seed, timing=timing)


def sweep(
    data_cfg: DatasetConfig,
    kind: str,
    values,
    methods,
    snr_db: float,
    samples: int,
    train_H=None,
    run_dir=None,
) -> list[tuple[float, MetricRecord]]:
    """Evaluate on fresh channels while varying user distance or path count.

    ``kind="distance"`` places every path at the given distance (metres),
    ``kind="paths"`` sets the mean path count. Returns ``(value, record)``.
    """
    if kind not in ("distance", "paths"):
        raise ValueError(f"sweep kind must be 'distance' or 'paths', got {kind!r}")
    est = Estimators(data_cfg, train_H=train_H, run_dir=run_dir)
    out = []
    for vi, v in enumerate(values):
        d = data_cfg.to_dict()
        if kind == "distance":
            d["distance_range"] = [float(v), float(v)]
        else:
            d["mean_paths"] = float(v)
        cfg = DatasetConfig.from_dict(d)
        H = np.stack([
            channel_matrix(sample_paths(cfg, sample_rng(cfg.seed, _EVAL_STREAM, 1 << 20, vi, k)),
                           cfg.rx_geometry(), cfg.tx_geometry()).matrix
            for k in range(samples)
        ])
        for rec in evaluate(H, methods, [snr_db], est, seed=cfg.seed + vi):
            out.append((float(v), rec))
    return out
