import sys

from loopqm.cli import main

sys.exit(main())
