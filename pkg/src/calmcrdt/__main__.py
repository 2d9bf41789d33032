import sys

from calmcrdt.cli import main

sys.exit(main())
