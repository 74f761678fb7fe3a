"""rpdp_fl's module-callable entry point."""
import sys

from rpdp_fl.cmd.main import main

sys.exit(main())
