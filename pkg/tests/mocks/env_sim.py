"""Returns 1.0 when BBOX_PROTOCOL=1 is set in the environment."""
import os
import sys

for line in sys.stdin:
    sys.stdout.write("OK 1 %s\n" % ("1.0" if os.environ.get("BBOX_PROTOCOL") == "1" else "0.0"))
    sys.stdout.flush()
