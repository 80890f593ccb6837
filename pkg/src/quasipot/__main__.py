"""Allow running the CLI with: python -m quasipot"""

import sys

from quasipot.cli import main

sys.exit(main())
