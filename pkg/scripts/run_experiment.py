#!/usr/bin/env python3
"""Convenience launcher for the sweep CLI.

Examples:
    python scripts/run_experiment.py run --preset fig_a --drops 50 \
        --realizations 100 --seed 7 --output results/fig_a --plot
    python scripts/run_experiment.py verify-stats --samples 100000
"""

import sys

from cfrsma.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
