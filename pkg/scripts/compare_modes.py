"""Train modes on the default synthetic corpus and print FER curves and probe results.

    python scripts/compare_modes.py                      # BASELINE vs AGE_SPK
    python scripts/compare_modes.py --modes all --json out.json
"""

import argparse
import json

from amtl.corpus import CorpusSpec, generate_corpus
from amtl.experiment import compare, describe
from amtl.model import ALL_MODES
from amtl.trainer import TrainSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", default="BASELINE,AGE_SPK", help="comma list or 'all'")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=TrainSchedule.n_repeats)
    ap.add_argument("--json", help="also dump final metrics here")
    args = ap.parse_args()

    modes = [m.value for m in ALL_MODES] if args.modes == "all" else args.modes.split(",")
    corpus = generate_corpus(CorpusSpec(seed=args.seed))
    results = compare(corpus, modes, TrainSchedule(n_repeats=args.repeats, seed=args.seed))
    print(describe(results))
    if args.json:
        out = {m: {"dev_fer": [r.dev_fer for r in res.reports],
                   "probes": {t: p.to_dict() for t, p in res.probes.items()}} for m, res in results.items()}
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
