import struct
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npbo.blackbox import (
    EvaluationError,
    ExternalBlackBox,
    ExternalSimulator,
    ProtocolError,
    evaluate_external,
    format_request,
    format_response,
    parse_request,
    parse_response,
)
from npbo.surrogate import Bounds

MOCKS = Path(__file__).parent / "mocks"
UNIT2 = Bounds([0.0, 0.0], [1.0, 1.0])


def mock(name, *args, bounds=UNIT2, output_dim=1, timeout_ms=5000):
    cmd = (sys.executable, str(MOCKS / name), *map(str, args))
    return ExternalSimulator(ExternalBlackBox(cmd, bounds, output_dim, timeout_ms))


def test_request_format_is_exact():
    assert format_request([0.1, 0.2]) == "EVAL 1 2 0.1 0.2\n"
    assert format_response([1.5]) == "OK 1 1.5\n"


def test_round_trip_example_is_bitwise():
    x = np.array([0.1, 0.2])
    assert parse_request(format_request(x)).tobytes() == x.tobytes()


finite_doubles = st.integers(0, 2**64 - 1).map(lambda b: struct.unpack("<d", struct.pack("<Q", b))[0]).filter(
    np.isfinite)


@settings(max_examples=500, deadline=None)
@given(st.lists(finite_doubles, min_size=1, max_size=8))
def test_wire_round_trip_lossless_for_all_finite_doubles(values):
    x = np.array(values)
    assert parse_request(format_request(x)).tobytes() == x.tobytes()
    assert parse_response(format_response(x), len(x)).tobytes() == x.tobytes()


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected_at_send(bad):
    with pytest.raises(ValueError):
        format_request([0.0, bad])


@pytest.mark.parametrize("line", ["", "YES 1 2", "OK", "OK x 1", "OK 2 1.0", "OK 1 1.0 2.0", "OK 1 nan", "OK 1 abc"])
def test_malformed_responses(line):
    with pytest.raises(ProtocolError):
        parse_response(line + "\n", 1)


def test_err_response_carries_message():
    with pytest.raises(EvaluationError, match="bad region") as info:
        parse_response("ERR bad region\n")
    assert not isinstance(info.value, ProtocolError)


def test_wrong_output_dim():
    with pytest.raises(ProtocolError):
        parse_response("OK 2 1.0 2.0\n", 1)


def test_box_validation():
    with pytest.raises(ValueError):
        ExternalBlackBox((), UNIT2)
    with pytest.raises(ValueError):
        ExternalBlackBox(("x",), UNIT2, output_dim=0)
    with pytest.raises(ValueError):
        ExternalBlackBox(("x",), UNIT2, timeout_ms=0)


def test_echo_simulator():
    with mock("echo_sim.py", output_dim=2) as sim:
        for x in np.random.default_rng(0).random((20, 2)):
            assert evaluate_external(sim, x).tobytes() == x.tobytes()


def test_child_sees_protocol_env_var():
    with mock("env_sim.py") as sim:
        assert sim([0.5, 0.5])[0] == 1.0


def test_err_then_recovery():
    with mock("err_sim.py") as sim:
        with pytest.raises(EvaluationError, match="bad region"):
            sim([0.9, 0.1])
        assert sim([0.3, 0.4])[0] == pytest.approx(0.25)


def test_bounds_checked_before_sending():
    with mock("echo_sim.py", output_dim=2) as sim:
        with pytest.raises(ValueError):
            sim([1.5, 0.0])
        with pytest.raises(ValueError):
            sim([0.5])


@pytest.mark.parametrize("action, error", [
    ("garbage", ProtocolError),
    ("short", ProtocolError),
    ("nan", ProtocolError),
    ("sleep", EvaluationError),
])
def test_misbehaviour_does_not_desync(tmp_path, action, error):
    with mock("scripted_sim.py", tmp_path / "state", action, timeout_ms=500) as sim:
        with pytest.raises(error):
            sim([0.25, 0.0])
        for v in (0.125, 0.375, 0.625):
            assert sim([v, 0.0])[0] == v


def test_extra_line_is_not_taken_as_next_answer(tmp_path):
    with mock("scripted_sim.py", tmp_path / "state", "extra") as sim:
        assert sim([0.25, 0.0])[0] == 0.25
        import time
        time.sleep(0.2)  # let the stray line arrive
        for v in (0.125, 0.375):
            assert sim([v, 0.0])[0] == v


def test_single_crash_is_retried(tmp_path):
    with mock("scripted_sim.py", tmp_path / "state", "crash") as sim:
        assert sim([0.25, 0.0])[0] == 0.25
        assert sim([0.5, 0.0])[0] == 0.5


def test_double_crash_fails(tmp_path):
    with mock("scripted_sim.py", tmp_path / "state", "crash,crash") as sim:
        with pytest.raises(EvaluationError, match="crashed"):
            sim([0.25, 0.0])
        # a later request gets a fresh child
        assert sim([0.5, 0.0])[0] == 0.5


def test_missing_executable():
    sim = ExternalSimulator(ExternalBlackBox(("/nonexistent/simulator",), UNIT2))
    with pytest.raises(EvaluationError, match="cannot start"):
        sim([0.1, 0.1])
