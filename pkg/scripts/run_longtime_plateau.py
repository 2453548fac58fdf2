#!/usr/bin/env python3
"""Run the longtime study with the packaged longtime_plateau.toml config."""

import sys
from pathlib import Path

from rbsim.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "longtime",
                "--config", str(ROOT / "configs" / "longtime_plateau.toml"),
                "--out-dir", str(ROOT / "out" / "longtime_plateau"),
                *sys.argv[1:],
            ]
        )
    )
