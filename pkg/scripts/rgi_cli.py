"""
Command line entry point for room geometry inference.
Subcommands are registered from the rgi.cli package.
"""

import sys

from rgi.cli import main

if __name__ == "__main__":
    sys.exit(main())
