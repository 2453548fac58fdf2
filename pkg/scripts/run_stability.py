#!/usr/bin/env python3
"""Run the stability study with the packaged stability.toml config."""

import sys
from pathlib import Path

from rbsim.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "stability",
                "--config", str(ROOT / "configs" / "stability.toml"),
                "--out-dir", str(ROOT / "out" / "stability"),
                *sys.argv[1:],
            ]
        )
    )
