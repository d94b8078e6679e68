"""Rebuild data/ml-100k from the MovieLens-100K files bundled in the RecBole wheel.

    python scripts/fetch_ml100k.py [--out data/ml-100k] [--wheel path/to/recbole.whl]
"""
import argparse
import logging

from hysage.datasets import build_ml100k

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/ml-100k")
    ap.add_argument("--wheel", help="local recbole wheel; downloaded with pip when omitted")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)
    print(build_ml100k(args.out, args.wheel))
