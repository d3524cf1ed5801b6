"""
Command line front end.

Subcommands::

    gen-data   write train/test datasets and a manifest
    corr       correlation matrices (closed form, quadrature, Monte Carlo) or a distance sweep
    estimate   per-sample NMSE of a classical estimator on a dataset
    train      train a network variant
    eval       metrics CSV over methods and SNRs, or a distance / path-count sweep
    describe   print a network configuration with stage shapes

``--config`` takes a JSON file. Its top-level keys ``dataset``, ``network``,
``train``, ``correlation`` and ``eval`` mirror the configuration types;
command-line flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, correlation, mssan
from .channel import ArrayGeometry, DatasetConfig
from .dataset import generate_dataset, load_split, sample_rng, snr_to_noise_power

log = logging.getLogger("nfmimo")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: top level must be an object")
    unknown = set(cfg) - {"dataset", "network", "train", "correlation", "eval"}
    if unknown:
        raise ValueError(f"{path}: unknown sections {sorted(unknown)}")
    return cfg


def _dataset_config(args, file_cfg) -> DatasetConfig:
    base = bench.PROFILES[args.profile]["dataset"]().to_dict()
    base.update(file_cfg.get("dataset", {}))
    for key in ("seed", "sample_count"):
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    if getattr(args, "snr", None):
        base["snr_set"] = args.snr
    unknown = set(base) - set(DatasetConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown dataset keys {sorted(unknown)}")
    return DatasetConfig.from_dict(base)


def _write_rows(path, header, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


# -- subcommands ---------------------------------------------------------------


def cmd_gen_data(args, file_cfg):
    cfg = _dataset_config(args, file_cfg)
    manifest = generate_dataset(cfg, args.out)
    log.info("wrote %d train / %d test samples to %s",
             manifest["train"]["count"], manifest["test"]["count"], args.out)
    return 0


def cmd_corr(args, file_cfg):
    c = dict(file_cfg.get("correlation", {}))
    for key in ("N", "freq", "mean_angle", "sigma_phi", "r0", "mean_distance", "sigma_psi", "draws", "seed"):
        v = getattr(args, key)
        if v is not None:
            c[key] = v
    N = int(c.get("N", 64))
    geom = ArrayGeometry(N, float(c.get("freq", 60e9)))
    r0 = float(c.get("r0", np.inf))
    if args.sweep:
        m, n = args.pair
        model = correlation.DistanceSpreadModel(1.0, float(c.get("sigma_psi", 10.0)),
                                                float(c.get("mean_angle", 0.0)))
        r0_values = args.r0_values or [10.0, 1e2, 1e3, 1e4, 1e5]
        vals = correlation.distance_sweep(m, n, model, geom.element_spacing, r0_values)
        _write_rows(args.out, ("r0", "magnitude"), [[f"{r:g}", f"{v:.12e}"] for r, v in zip(r0_values, vals)])
        return 0
    if args.method == "closed-form":
        R = correlation.r_theta_closed(
            correlation.AngularSpreadModel(float(c.get("mean_angle", 0.0)), float(c.get("sigma_phi", 0.1)), r0),
            geom)
    elif args.method == "quadrature":
        R = correlation.r_r(
            correlation.DistanceSpreadModel(float(c.get("mean_distance", 10.0)), float(c.get("sigma_psi", 10.0)),
                                            float(c.get("mean_angle", 0.0))),
            geom)
    else:
        R = correlation.corr_monte_carlo(
            float(c.get("mean_angle", 0.0)), float(c.get("sigma_phi", 0.1)),
            float(c.get("mean_distance", r0 if np.isfinite(r0) else 10.0)), float(c.get("sigma_psi", 0.0)),
            geom, int(c.get("draws", 100_000)), np.random.default_rng(int(c.get("seed", 0))))
    V = R.values
    rows = [
        [m, n, f"{V[m, n].real:.12e}", f"{V[m, n].imag:.12e}", f"{abs(V[m, n]):.12e}", R.provenance]
        for m in range(N) for n in range(N)
    ]
    _write_rows(args.out, ("m", "n", "re", "im", "magnitude", "provenance"), rows)
    return 0


def cmd_estimate(args, file_cfg):
    test_ds, manifest = load_split(args.data, "test")
    train_ds, _ = load_split(args.data, "train")
    cfg = DatasetConfig.from_dict(manifest["config"])
    if args.method not in bench.CLASSICAL:
        raise ValueError(f"estimate supports {bench.CLASSICAL}; use eval for learned methods")
    est = bench.Estimators(cfg, train_H=train_ds.H_gt)
    est.check(args.method)
    sigma2 = snr_to_noise_power(args.snr)
    rows = []
    for k, H in enumerate(test_ds.H_gt):
        obs = bench.observe(H, est.beams, sigma2, sample_rng(cfg.seed, bench._EVAL_STREAM, 0, k))
        e = bench.nmse_per_sample(H, est.classical(args.method, obs))[0]
        rows.append([k, f"{e:.10e}", f"{bench.to_db(e):.6f}"])
    _write_rows(args.out, ("sample", "nmse_linear", "nmse_db"), rows)
    return 0


def cmd_train(args, file_cfg):
    t = dict(bench.PROFILES[args.profile]["train"])
    t.update(file_cfg.get("train", {}))
    t["profile"] = args.profile
    if file_cfg.get("network"):
        t["network"] = file_cfg["network"]
    for key in ("epochs", "batch_size", "base_lr", "seed", "variant"):
        v = getattr(args, key)
        if v is not None:
            t[key] = v
    t["dataset"] = args.data
    t["out_dir"] = args.out
    unknown = set(t) - set(bench.TrainConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown train keys {sorted(unknown)}")
    cfg = bench.TrainConfig.from_dict(t)
    res = bench.train(cfg, log=log.info)
    log.info("best test loss at epoch %d; checkpoint in %s", res.best_epoch, res.run_dir)
    return 0


def cmd_eval(args, file_cfg):
    e = dict(file_cfg.get("eval", {}))
    methods = args.methods or e.get("methods") or ["ls", "lmmse", "omp"]
    snr_set = args.snr or e.get("snr_set")
    if args.sweep:
        _, manifest = load_split(args.data, "test")
        train_ds, _ = load_split(args.data, "train")
        cfg = DatasetConfig.from_dict(manifest["config"])
        values = args.values
        if not values:
            raise ValueError("--sweep needs --values")
        snr = snr_set[0] if snr_set else 5.0
        res = bench.sweep(cfg, args.sweep, values, methods, snr, args.samples,
                          train_H=train_ds.H_gt, run_dir=args.runs)
        header = ("distance_m" if args.sweep == "distance" else "paths",) + bench.METRIC_HEADER
        _write_rows(args.out, header, [[f"{v:g}"] + r.row() for v, r in res])
        return 0
    recs = bench.evaluate_dataset(args.data, methods, snr_set, run_dir=args.runs, timing=args.timing)
    if args.out:
        bench.write_metrics(args.out, recs)
    else:
        _write_rows(None, bench.METRIC_HEADER, [r.row() for r in recs])
    return 0


def cmd_describe(args, file_cfg):
    make = bench.PROFILES[args.profile]["network"]
    Nr = args.Nr or (256 if args.profile == "full" else 32)
    Nt = args.Nt or (8 if args.profile == "full" else 4)
    net = make(args.variant, Nr, Nt).to_dict()
    net.update(file_cfg.get("network", {}))
    net["variant"] = args.variant
    print(mssan.describe(mssan.NetworkConfig.from_dict(net)))
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nfmimo", description="Near-field channel estimation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--profile", choices=tuple(bench.PROFILES), default="desk")

    sp = sub.add_parser("gen-data", help="generate a dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--sample-count", dest="sample_count", type=int)
    sp.add_argument("--snr", type=float, nargs="+")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("corr", help="correlation matrices")
    common(sp)
    sp.add_argument("--method", choices=("closed-form", "quadrature", "monte-carlo"), default="closed-form")
    sp.add_argument("--N", type=int)
    sp.add_argument("--freq", type=float)
    sp.add_argument("--mean-angle", dest="mean_angle", type=float)
    sp.add_argument("--sigma-phi", dest="sigma_phi", type=float)
    sp.add_argument("--r0", type=float)
    sp.add_argument("--mean-distance", dest="mean_distance", type=float)
    sp.add_argument("--sigma-psi", dest="sigma_psi", type=float)
    sp.add_argument("--draws", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--sweep", action="store_true", help="K_r|B_r| of one entry against mean distance")
    sp.add_argument("--pair", type=int, nargs=2, default=(160, 96), metavar=("M", "N"))
    sp.add_argument("--r0-values", dest="r0_values", type=float, nargs="+")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_corr)

    sp = sub.add_parser("estimate", help="per-sample NMSE of a classical estimator")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", choices=bench.CLASSICAL, default="ls")
    sp.add_argument("--snr", type=float, default=10.0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("train", help="train a network")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", default="runs")
    sp.add_argument("--variant", choices=bench.LEARNED)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", dest="base_lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate estimators")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--runs", help="directory holding trained checkpoints")
    sp.add_argument("--methods", nargs="+", choices=bench.METHODS)
    sp.add_argument("--snr", type=float, nargs="+")
    sp.add_argument("--sweep", choices=("distance", "paths"))
    sp.add_argument("--values", type=float, nargs="+")
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--timing", action="store_true", help="record wall time (breaks byte-reproducibility)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("describe", help="print a network configuration")
    common(sp)
    sp.add_argument("--variant", choices=bench.LEARNED, default="mssan")
    sp.add_argument("--Nr", type=int)
    sp.add_argument("--Nt", type=int)
    sp.set_defaults(func=cmd_describe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args, _load_config(args.config))
    except (ValueError, OSError, KeyError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"nfmimo {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
