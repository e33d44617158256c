"""
Entry point for apsde.
Run this with a subcommand, e.g. `python run.py repro --seed 42`.
"""

import sys

from src.ui.cli import main

if __name__ == "__main__":
    sys.exit(main())
