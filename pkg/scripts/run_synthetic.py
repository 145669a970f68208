"""Synthetic covariate-shift study (squared, absolute and HSIC losses).

Usage: python3 scripts/run_synthetic.py [hsic-learn flags], e.g. --repeats 5 --out results/synthetic
"""
import sys

from hsic_learn.cli import run

if __name__ == "__main__":
    sys.exit(run(["synthetic"] + sys.argv[1:]))
