"""Normalized-error and Hamming tables on the synthetic benchmark.

    python scripts/synthetic_tables.py --runs 20 --out results/synthetic.json
"""

import argparse
import time

from jointsparse import io
from jointsparse.experiments import SyntheticConfig, render_table, run_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ks", default="50,70,90")
    p.add_argument("--overlaps", default="1.0,0.5")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--methods", default="scc,gl,glsls,pfc")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    args = p.parse_args()

    methods = args.methods.split(",")
    rows, start = [], time.perf_counter()
    for overlap in (float(v) for v in args.overlaps.split(",")):
        block = []
        for k in (int(v) for v in args.ks.split(",")):
            cfg = SyntheticConfig(k=k, overlap_fraction=overlap, seed=args.seed)
            block += run_benchmark(cfg, methods, args.runs, workers=args.workers)
        print(f"overlap {overlap:g}")
        print(render_table(block, "normalized_l2"))
        print(render_table(block, "hamming"))
        print()
        rows += [(overlap, r) for r in block]
    print(f"elapsed {time.perf_counter() - start:.0f}s")
    if args.out:
        io.save_json([dict(r.to_dict(), overlap_fraction=o) for o, r in rows], args.out)


if __name__ == "__main__":
    main()
