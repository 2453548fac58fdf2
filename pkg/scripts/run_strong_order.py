#!/usr/bin/env python3
"""Run the strong-order study with the packaged strong_order.toml config."""

import sys
from pathlib import Path

from rbsim.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "strong-order",
                "--config", str(ROOT / "configs" / "strong_order.toml"),
                "--out-dir", str(ROOT / "out" / "strong_order"),
                *sys.argv[1:],
            ]
        )
    )
