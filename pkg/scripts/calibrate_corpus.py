"""Pilot grid over corpus nuisance scales: BASELINE vs AGE_SPK at each setting.

Prints, per setting, the Bayes-oracle frame accuracy, both dev FER curves and
the fraction of the BASELINE probe margin that AGE_SPK removes. Each setting
takes a few minutes on one core.

    python scripts/calibrate_corpus.py --grid "0.5,0.5,1.5;1.0,1.0,2.0"
"""

import argparse

from amtl.corpus import CorpusSpec, bayes_oracle_accuracy, generate_corpus
from amtl.experiment import compare, describe
from amtl.trainer import TrainSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", default="0.5,0.5,1.5;1.0,1.0,2.0",
                    help="semicolon-separated speaker_scale,age_scale,noise_sigma triples")
    ap.add_argument("--lr", type=float, default=TrainSchedule.learning_rate)
    ap.add_argument("--batch-size", type=int, default=TrainSchedule.batch_size)
    args = ap.parse_args()

    for cell in args.grid.split(";"):
        spk, age, sigma = (float(v) for v in cell.split(","))
        spec = CorpusSpec(speaker_scale=spk, age_scale=age, noise_sigma=sigma)
        print(f"== speaker_scale={spk} age_scale={age} noise_sigma={sigma} "
              f"oracle={bayes_oracle_accuracy(spec):.3f}", flush=True)
        results = compare(generate_corpus(spec), schedule=TrainSchedule(learning_rate=args.lr, batch_size=args.batch_size))
        print(describe(results), flush=True)


if __name__ == "__main__":
    main()
