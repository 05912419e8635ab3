"""Time the FTRL fit/predict kernels on the numba and numpy paths.

Uses content-model batches (hashed text plus dense image block) built from a
small synthetic log, runs each kernel on both backends and checks that they
agree to rounding before reporting rows/second.

    python benchmarks/bench_kernels.py --listings 4000 --per-day 8000 --repeat 3
"""

import argparse
import time

import numpy as np

from ctrstack import _accel, batches, kernels
from ctrstack.features import ContentConfig
from ctrstack.learner import EPS, FtrlHyperparams
from ctrstack.synthetic import SyntheticSpec, generate_synthetic_logs


def build(args):
    spec = SyntheticSpec(n_listings=args.listings, impressions_per_day=args.per_day,
                         power_law_exponent=1.5, seed=args.seed)
    log = generate_synthetic_logs(spec)
    rows = np.arange(min(len(log), args.rows))
    log = log.take(rows)
    batch = batches.content_rows(log, ContentConfig())
    return batch, log.labels.astype(np.float64)


def run_fit(batch, labels, hyper, use_numba):
    z = np.zeros(batch.dim)
    n = np.zeros(batch.dim)
    order = np.arange(len(batch), dtype=np.int64)
    w = np.ones(len(batch))
    t = time.perf_counter()
    kernels.fit_rows(z, n, batch.indptr, batch.indices, batch.values, batch.row_block,
                     batch.dense, batch.row_dense, batch.dense_offset, labels, w, order,
                     hyper.lr_alpha, hyper.lr_beta, hyper.lambda1, hyper.lambda2, EPS,
                     use_numba=use_numba)
    return time.perf_counter() - t, z, n


def run_predict(batch, w, use_numba):
    t = time.perf_counter()
    p = kernels.predict_rows(w, batch.indptr, batch.indices, batch.values, batch.row_block,
                             batch.dense, batch.row_dense, batch.dense_offset, EPS,
                             use_numba=use_numba)
    return time.perf_counter() - t, p


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--listings", type=int, default=4000)
    ap.add_argument("--per-day", type=int, default=8000)
    ap.add_argument("--rows", type=int, default=50000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    batch, labels = build(args)
    hyper = FtrlHyperparams()
    print(f"rows={len(batch)} dim={batch.dim} sparse_nnz={batch.indices.size} "
          f"dense={batch.dense.shape}")

    # warm the JIT caches so compile time is not counted
    small = batch.take(np.arange(min(10, len(batch))))
    run_fit(small, labels[:len(small)], hyper, True)
    run_predict(small, np.zeros(batch.dim), True)

    results = {}
    for name, flag in (("numba", True), ("numpy", False)):
        fit_t, pred_t = [], []
        for _ in range(args.repeat):
            t, z, n = run_fit(batch, labels, hyper, flag)
            fit_t.append(t)
        w = kernels.closed_form_weights(z, n, hyper.lr_alpha, hyper.lr_beta,
                                        hyper.lambda1, hyper.lambda2, use_numba=flag)
        for _ in range(args.repeat):
            t, p = run_predict(batch, w, flag)
            pred_t.append(t)
        results[name] = (min(fit_t), min(pred_t), z, p)

    dz = np.max(np.abs(results["numba"][2] - results["numpy"][2]))
    dp = np.max(np.abs(results["numba"][3] - results["numpy"][3]))
    print(f"max |dz| = {dz:.3e}   max |dp| = {dp:.3e}")
    print(f"{'backend':8s} {'fit s':>9s} {'fit rows/s':>12s} {'predict s':>10s} {'pred rows/s':>12s}")
    for name, (ft, pt, _, _) in results.items():
        print(f"{name:8s} {ft:9.3f} {len(batch) / ft:12.0f} {pt:10.3f} {len(batch) / pt:12.0f}")
    nb, npy = results["numba"], results["numpy"]
    print(f"speedup: fit x{npy[0] / nb[0]:.1f}, predict x{npy[1] / nb[1]:.1f}")


if __name__ == "__main__":
    main()
