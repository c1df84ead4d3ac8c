"""Run ``spikeslab bench`` and fit the log-log slope of per-sample time against d.

    python3 scripts/bench_scaling.py --d 512,1024,2048,4096 --reps 3
"""

import argparse
import contextlib
import csv
import io

import numpy as np

from spikeslab.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", default="512,1024,2048")
    ap.add_argument("--k-star", default="40")
    ap.add_argument("--reps", type=int, default=3)
    args = ap.parse_args()
    best: dict = {}
    for rep in range(args.reps):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            cli_main(["bench", "--d", args.d, "--k-star", args.k_star, "--seed", str(rep)])
        for row in csv.DictReader(io.StringIO(buf.getvalue())):
            key = (int(row["d"]), int(row["k_star"]))
            best[key] = min(best.get(key, np.inf), float(row["per_sample_ms"]))
    for k_star in sorted({k for _, k in best}):
        ds = np.array(sorted(d for d, k in best if k == k_star))
        ms = np.array([best[(d, k_star)] for d in ds])
        slope = np.polyfit(np.log(ds), np.log(ms), 1)[0]
        print(f"k*={k_star}: " + ", ".join(f"d={d}: {m:.2f} ms" for d, m in zip(ds, ms))
              + f"; slope {slope:.2f}")


if __name__ == "__main__":
    main()
