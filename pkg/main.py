"""
degenbeam: numerical laboratory for the degenerate beam y_tt + (a y_xx)_xx = 0.
"""

import sys

from src.cli.app import main

if __name__ == "__main__":
    sys.exit(main())
