"""Train AGE_SPK at alpha_max in {0.1, 0.01, 0.001} and print dev FER per repeat."""

import argparse

from amtl.corpus import CorpusSpec, generate_corpus
from amtl.evaluation import ProbeConfig
from amtl.experiment import alpha_sweep, describe
from amtl.trainer import TrainSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--alphas", default="0.1,0.01,0.001")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--probe", action="store_true", help="also probe each generator")
    args = ap.parse_args()

    corpus = generate_corpus(CorpusSpec(seed=args.seed))
    alphas = [float(a) for a in args.alphas.split(",")]
    results = alpha_sweep(corpus, alphas, TrainSchedule(seed=args.seed), ProbeConfig() if args.probe else None)
    print(describe(results))


if __name__ == "__main__":
    main()
