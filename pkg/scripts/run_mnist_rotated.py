"""Rotated MNIST accuracy for cross-entropy and HSIC MLPs. Long running.

Usage: python3 scripts/run_mnist_rotated.py [hsic-learn flags], e.g. --repeats 5 --out results/mnist_rotated
"""
import sys

from hsic_learn.cli import run

if __name__ == "__main__":
    sys.exit(run(["mnist"] + sys.argv[1:]))
