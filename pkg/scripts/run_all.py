#!/usr/bin/env python3
"""Run every study with its packaged config; stop on the first failure."""

import subprocess
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent

STUDIES = [
    "run_strong_order.py",
    "run_longtime_plateau.py",
    "run_longtime_lambda.py",
    "run_chaos_exact.py",
    "run_chaos_interacting.py",
    "run_stability.py",
    "run_perf.py",
]

if __name__ == "__main__":
    for script in STUDIES:
        print(f"=== {script} ===", flush=True)
        code = subprocess.call([sys.executable, str(HERE / script), *sys.argv[1:]])
        if code != 0:
            sys.exit(code)
    print("all studies passed")
