"""
n2vst.__main__ — Entry point for python -m n2vst.
"""

import sys

from n2vst.cli import main

if __name__ == "__main__":
    sys.exit(main())
