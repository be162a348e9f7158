import sys

from actoreg.cli import main

sys.exit(main())
