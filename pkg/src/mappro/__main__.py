import sys

from mappro.cli import main

sys.exit(main())
