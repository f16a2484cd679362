import sys

from rgi.cli import main

sys.exit(main())
