import sys

from fermion_limits.cli import main

sys.exit(main())
