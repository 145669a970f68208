"""Numerical property checks of the estimator, gradients and training.

Usage: python3 scripts/run_proptest.py [hsic-learn flags], e.g. --repeats 5 --out results/proptest
"""
import sys

from hsic_learn.cli import run

if __name__ == "__main__":
    sys.exit(run(["proptest"] + sys.argv[1:]))
