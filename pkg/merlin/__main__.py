import sys

from merlin.main import main

sys.exit(main())
