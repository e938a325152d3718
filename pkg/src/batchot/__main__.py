import sys

from batchot.cli import main

sys.exit(main())
