import sys

from panofuse.cli import main

sys.exit(main())
