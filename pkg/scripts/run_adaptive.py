#!/usr/bin/env python3
"""Adaptive convergence run for one parameter-study configuration."""
import sys

from sppsim.cli import main

if __name__ == "__main__":
    args = sys.argv[1:] or ["run", "--sigma", "2.56e-4+0.160j", "--a", "1.0",
                            "--cycles", "6", "--out", "out_adaptive"]
    sys.exit(main(args))
