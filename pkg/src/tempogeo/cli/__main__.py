import sys

from tempogeo.cli import main

sys.exit(main())
