import sys

from addl.cli import main

sys.exit(main())
