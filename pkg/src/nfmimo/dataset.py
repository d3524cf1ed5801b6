"""
Training-pair datasets on disk.

Binary layout (little endian)::

    b"NFCD" | u32 version=1 | u32 Nr | u32 Nt | u64 count
    count x ( H_gt[Nr, Nt] , X_in[Nr, Nt] )

each matrix row-major (receive index outermost) as float32 ``re, im`` pairs.
A JSON manifest next to the binaries records the full :class:`DatasetConfig`,
the seed and the SNR assigned to every sample.

Sample ``i`` draws everything (paths, noise) from its own Philox stream keyed
by ``(seed, i)``, so generation order never changes the bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import DatasetConfig, channel_matrix, sample_paths
from .pilots import ls_estimate, make_beams, observe

MAGIC = b"NFCD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")

TRAIN_FILE = "train.nfcd"
TEST_FILE = "test.nfcd"
MANIFEST_FILE = "manifest.json"


def sample_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent counter-based stream for ``(seed, *index)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, index)])))


def snr_to_noise_power(snr_db: float) -> float:
    """Noise power for unit signal power, ``SNR = 1 / sigma^2``."""
    return float(10.0 ** (-snr_db / 10.0))


@dataclass
class ChannelDataset:
    """In-memory view of one dataset file (complex128 arrays, shape (K, Nr, Nt))."""

    H_gt: np.ndarray
    X_in: np.ndarray

    def __len__(self):
        return self.H_gt.shape[0]

    @property
    def Nr(self) -> int:
        return self.H_gt.shape[1]

    @property
    def Nt(self) -> int:
        return self.H_gt.shape[2]


def to_features(H: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Complex (..., Nr, Nt) -> real (..., Nr, Nt, 2) with (re, im) on the last axis."""
    return np.stack([H.real, H.imag], axis=-1).astype(dtype)


def from_features(X: np.ndarray) -> np.ndarray:
    return X[..., 0].astype(np.float64) + 1j * X[..., 1].astype(np.float64)


def write_dataset(path, H_gt: np.ndarray, X_in: np.ndarray) -> None:
    H_gt = np.asarray(H_gt)
    X_in = np.asarray(X_in)
    if H_gt.shape != X_in.shape or H_gt.ndim != 3:
        raise ValueError("H_gt and X_in must share shape (count, Nr, Nt)")
    count, Nr, Nt = H_gt.shape
    body = np.stack([to_features(H_gt), to_features(X_in)], axis=1)  # (K, 2, Nr, Nt, 2)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, Nr, Nt, count))
        fh.write(body.astype("<f4").tobytes(order="C"))


def read_dataset(path) -> ChannelDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, Nr, Nt, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expected = count * 2 * Nr * Nt * 2 * 4
    if len(raw) - _HEADER.size != expected:
        raise ValueError(f"{path}: body has {len(raw) - _HEADER.size} bytes, expected {expected}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, 2, Nr, Nt, 2)
    return ChannelDataset(from_features(body[:, 0]), from_features(body[:, 1]))


def generate_sample(cfg: DatasetConfig, index: int):
    """Return ``(H, H_ls, snr_db)`` for sample ``index``."""
    rng = sample_rng(cfg.seed, index)
    rx, tx = cfg.rx_geometry(), cfg.tx_geometry()
    H = channel_matrix(sample_paths(cfg, rng), rx, tx).matrix
    snr_db = cfg.snr_set[index % len(cfg.snr_set)]
    beams = make_beams(cfg.Nr, cfg.Nt, pilot_power=cfg.pilot_power)
    obs = observe(H, beams, snr_to_noise_power(snr_db), rng)
    return H, ls_estimate(obs), snr_db


def generate_dataset(cfg: DatasetConfig, out_dir) -> dict:
    """Write train/test files and the manifest into ``out_dir``; return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_train, n_test = cfg.split_counts()
    H_all = np.empty((cfg.sample_count, cfg.Nr, cfg.Nt), dtype=complex)
    X_all = np.empty_like(H_all)
    snrs = []
    for i in range(cfg.sample_count):
        H_all[i], X_all[i], snr = generate_sample(cfg, i)
        snrs.append(snr)
    write_dataset(out / TRAIN_FILE, H_all[:n_train], X_all[:n_train])
    write_dataset(out / TEST_FILE, H_all[n_train:], X_all[n_train:])
    manifest = {
        "format": "NFCD",
        "version": VERSION,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "train": {"file": TRAIN_FILE, "count": n_train, "snr_db": snrs[:n_train]},
        "test": {"file": TEST_FILE, "count": n_test, "snr_db": snrs[n_train:]},
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_split(data_dir, split: str):
    """Load ``"train"`` or ``"test"`` from a generated directory -> (dataset, manifest)."""
    data_dir = Path(data_dir)
    manifest = json.loads((data_dir / MANIFEST_FILE).read_text())
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    ds = read_dataset(data_dir / manifest[split]["file"])
    cfg = manifest["config"]
    if ds.Nr != cfg["Nr"] or ds.Nt != cfg["Nt"]:
        raise ValueError("dataset file does not match its manifest")
    return ds, manifest
