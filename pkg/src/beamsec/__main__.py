"""Allow ``python3 -m beamsec``."""
import sys

from .cli import main

sys.exit(main())
