#!/usr/bin/env python3
"""Layer-strength sweep on a fixed mesh (lossless sheet, weak surface wave)."""
import sys

from sppsim.cli import main

if __name__ == "__main__":
    args = sys.argv[1:] or ["pml-study", "--sigma", "0.15j", "--a", "1.0",
                            "--out", "out_pml"]
    sys.exit(main(args))
