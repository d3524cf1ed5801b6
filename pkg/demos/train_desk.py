"""
Desk-scale training run
=======================

Generates the 32 x 4 desk dataset, trains MsSAN and the CNN baseline and
compares them with LS at 5 dB. Takes roughly ten minutes on one core.

    python demos/train_desk.py [workdir] [epochs]
"""
import sys
import time
from pathlib import Path

from nfmimo import bench
from nfmimo.dataset import generate_dataset

work = Path(sys.argv[1] if len(sys.argv) > 1 else "desk_run")
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 30
data, runs = work / "data", work / "runs"

if not (data / "manifest.json").exists():
    generate_dataset(bench.desk_dataset_config(seed=0), data)

for variant in ("mssan", "cnn"):
    t0 = time.perf_counter()
    cfg = bench.profile_train_config("desk", variant=variant, dataset=str(data), out_dir=str(runs), epochs=epochs)
    res = bench.train(cfg, log=print)
    test = [c[3] for c in res.curve]
    print(f"{variant}: best epoch {res.best_epoch}, test loss falls in "
          f"{bench.decreasing_fraction(test):.0%} of epochs, {time.perf_counter() - t0:.0f} s\n")

recs = bench.evaluate_dataset(data, ["ls", "lmmse", "omp", "mssan", "cnn"], [5.0], run_dir=runs)
bench.write_metrics(work / "metrics_5db.csv", recs)
for r in recs:
    print(f"{r.method:<6} NMSE {r.nmse_db:7.2f} dB   SE {r.se_bits:.3f} b/s/Hz")
