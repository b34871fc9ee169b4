"""Run the command-line entry point with ``python -m isoformer``."""

import sys

from .cli import main

sys.exit(main())
