"""Compare recursive-input designs on one synthetic corpus.

Trains four 2-stage variants and prints their test Rand F-scores:

  single_top_e2e   only the top side output feeds the next stage
  single_next_e2e  only the second-from-top side output feeds forward
  multi_stepwise   all side outputs feed forward, stage 1 frozen in phase 2
  multi_e2e        all side outputs feed forward, joint training

Run with --seeds 3 to see the spread. Each seed trains every variant, so
expect roughly a minute per seed at the default corpus size.
"""

import argparse
import time
from dataclasses import replace

from m2fcn.autodiff import Tensor
from m2fcn.config import load_run_config
from m2fcn.data import synth_corpus
from m2fcn.evaluation import LabelImage, best_fscore_sweep
from m2fcn.training import train_pipeline


def variants(network):
    top = len(network.subnet.levels)
    yield "single_top_e2e", replace(network, recursive_mode="single", recursive_level=top), "end_to_end"
    if top > 1:
        yield "single_next_e2e", replace(network, recursive_mode="single", recursive_level=top - 1), "end_to_end"
    yield "multi_stepwise", network, "stepwise"
    yield "multi_e2e", network, "end_to_end"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=1, help="number of seeds to run")
    ap.add_argument("--train", type=int, default=8)
    ap.add_argument("--test", type=int, default=3)
    ap.add_argument("--size", type=int, default=48)
    args = ap.parse_args()

    cfg = load_run_config(env={})
    train, test = synth_corpus(
        seed=0, n_train=args.train, n_test=args.test,
        height=args.size, width=args.size, n_cells=cfg.data.n_cells,
        distractor_rate=cfg.data.distractor_rate,
    )
    gts = [LabelImage(s.segments) for s in test]
    thresholds = cfg.eval.thresholds()

    print(f"{'variant':<16} " + " ".join(f"seed{s:<2}" for s in range(args.seeds)))
    t0 = time.time()
    for name, ncfg, mode in variants(cfg.network):
        row = []
        for seed in range(args.seeds):
            sched = replace(cfg.schedule, mode=mode, seed=seed)
            result, _ = train_pipeline(ncfg, train, sched)
            probs = [result.network.predict(Tensor(s.image)) for s in test]
            scores, _, _ = best_fscore_sweep(probs, gts, thresholds)
            row.append(scores.fscore)
        print(f"{name:<16} " + " ".join(f"{f:.4f}" for f in row))
    print(f"total {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
