import sys

from tana.cli import main

sys.exit(main())
