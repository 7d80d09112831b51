import sys

from manifold_rl.cli import main

sys.exit(main())
