"""Misbehaves according to a script of actions, one per request.

Actions: ok, garbage, short, extra (two lines), sleep, crash, nan.
After the script runs out every request is answered correctly.
"""
import os
import sys
import time

from npbo.blackbox import format_response, parse_request

state_file = sys.argv[1]
actions = sys.argv[2].split(",")

for line in sys.stdin:
    # the position in the script survives restarts
    with open(state_file, "a+") as fh:
        fh.seek(0)
        i = len(fh.read())
        fh.write(".")
    x = parse_request(line)
    action = actions[i] if i < len(actions) else "ok"
    if action == "garbage":
        sys.stdout.write("hello there\n")
    elif action == "short":
        sys.stdout.write("OK 2 1.0\n")
    elif action == "nan":
        sys.stdout.write("OK 1 nan\n")
    elif action == "extra":
        sys.stdout.write(format_response([x[0]]) + format_response([-1.0]))
    elif action == "sleep":
        time.sleep(2.0)
        sys.stdout.write(format_response([x[0]]))
    elif action == "crash":
        os._exit(3)
    else:
        sys.stdout.write(format_response([x[0]]))
    sys.stdout.flush()
