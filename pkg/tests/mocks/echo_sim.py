"""Answers every request with its own input vector."""
import sys

from npbo.blackbox import format_response, parse_request

for line in sys.stdin:
    sys.stdout.write(format_response(parse_request(line)))
    sys.stdout.flush()
