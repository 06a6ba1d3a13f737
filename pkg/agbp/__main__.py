import sys

from agbp.cli import main

sys.exit(main())
