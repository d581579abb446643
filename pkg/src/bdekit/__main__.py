import sys

from bdekit.cli import main

sys.exit(main())
