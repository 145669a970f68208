"""HSIC mini-batch size study on the Laplacian synthetic setup.

Usage: python3 scripts/run_batch_size.py [hsic-learn flags], e.g. --repeats 5 --out results/batch_size
"""
import sys

from hsic_learn.cli import run

if __name__ == "__main__":
    sys.exit(run(["batchsize"] + sys.argv[1:]))
