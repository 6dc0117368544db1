"""
Entry point pro spuštění simulátoru z příkazové řádky.

Použití:
    python -m fcrec_sim run --dataset ml-100k/u.data --method f3crec
"""

import sys

from fcrec_sim.cli import main

if __name__ == "__main__":
    sys.exit(main())
