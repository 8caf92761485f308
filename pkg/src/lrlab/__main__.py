import sys

from lrlab.harness.cli import main

sys.exit(main())
