#!/usr/bin/env python3
"""Run the perf study with the packaged perf.toml config."""

import sys
from pathlib import Path

from rbsim.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "perf",
                "--config", str(ROOT / "configs" / "perf.toml"),
                "--out-dir", str(ROOT / "out" / "perf"),
                *sys.argv[1:],
            ]
        )
    )
