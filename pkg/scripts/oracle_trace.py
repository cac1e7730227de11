#!/usr/bin/env python3
"""Dump the closed-form interface trace (pole, branch cut, total) to CSV."""
import sys

from sppsim.cli import main

if __name__ == "__main__":
    args = sys.argv[1:] or ["oracle", "--sigma", "2.0e-3+0.2j", "--a", "1.0",
                            "--out", "oracle_trace.csv"]
    sys.exit(main(args))
