#!/usr/bin/env python3
"""Run the chaos study with the packaged chaos_exact.toml config."""

import sys
from pathlib import Path

from rbsim.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "chaos",
                "--config", str(ROOT / "configs" / "chaos_exact.toml"),
                "--out-dir", str(ROOT / "out" / "chaos_exact"),
                *sys.argv[1:],
            ]
        )
    )
