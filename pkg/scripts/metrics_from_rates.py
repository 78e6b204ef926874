"""Rebuild a confusion matrix from per-class precision/recall and print the report.

    python scripts/metrics_from_rates.py            # built-in five-class rates
    python scripts/metrics_from_rates.py rates.json # {"precision": [...], "recall": [...], "support": [...]}
"""

import argparse
import json

from cellpheno.classify import classification_report, confusion_from_rates

# reported held-out rates for CYT, FIB, HOF, SYN, VAS at 200 patches per class
RATES = {"precision": [0.748, 0.875, 0.960, 0.965, 0.899],
         "recall": [0.905, 0.945, 0.725, 0.975, 0.850],
         "support": [200] * 5}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("rates", nargs="?", help="JSON file with precision, recall and support lists")
    args = ap.parse_args()
    rates = RATES if args.rates is None else json.load(open(args.rates))
    cm = confusion_from_rates(rates["precision"], rates["recall"], rates["support"])
    print("confusion matrix (rows true, columns predicted):")
    for row in cm:
        print("  " + " ".join(f"{v:4d}" for v in row))
    print()
    print(classification_report(cm).table())


if __name__ == "__main__":
    main()
