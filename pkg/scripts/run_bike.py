"""Bike sharing season-shift table. Needs `hsic-learn fetch` first.

Usage: python3 scripts/run_bike.py [hsic-learn flags], e.g. --repeats 5 --out results/bike
"""
import sys

from hsic_learn.cli import run

if __name__ == "__main__":
    sys.exit(run(["bike"] + sys.argv[1:]))
