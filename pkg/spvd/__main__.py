import sys

from spvd.cli import main

sys.exit(main())
