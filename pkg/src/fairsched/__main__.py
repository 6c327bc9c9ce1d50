import sys

from fairsched.cli import main

sys.exit(main())
