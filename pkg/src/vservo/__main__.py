import sys

from vservo.cli import main

sys.exit(main())
