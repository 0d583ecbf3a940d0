"""Drive an external simulator over a line protocol on its stdin/stdout.

Wire format (UTF-8, one line each way, ``\\n`` terminated)::

    request:  EVAL 1 <d> v1 ... vd
    response: OK <m> u1 ... um
              ERR <message>

Numbers are written with :func:`repr`, the shortest decimal string that
reads back to the identical float64, so values survive the round trip
exactly. The child runs with the parent's environment plus
``BBOX_PROTOCOL=1``.
"""

from __future__ import annotations

import logging
import os
import queue
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .surrogate import Bounds

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1


class EvaluationError(RuntimeError):
    pass


class ProtocolError(EvaluationError):
    """The child answered with something that is not a valid response."""


def format_request(x) -> str:
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("refusing to send non-finite values")
    return " ".join(["EVAL", str(PROTOCOL_VERSION), str(x.size), *(repr(float(v)) for v in x)]) + "\n"


def parse_request(line: str) -> np.ndarray:
    """Inverse of :func:`format_request`; handy for writing simulators in Python."""
    parts = line.split()
    if len(parts) < 3 or parts[0] != "EVAL":
        raise ProtocolError(f"not an EVAL request: {line!r}")
    if parts[1] != str(PROTOCOL_VERSION):
        raise ProtocolError(f"unsupported protocol version {parts[1]!r}")
    d = int(parts[2])
    if len(parts) != 3 + d:
        raise ProtocolError(f"request announces {d} values but carries {len(parts) - 3}")
    return np.array([float(v) for v in parts[3:]])


def format_response(values) -> str:
    values = np.asarray(values, dtype=np.float64).ravel()
    return " ".join(["OK", str(values.size), *(repr(float(v)) for v in values)]) + "\n"


def parse_response(line: str, expected_dim: int | None = None) -> np.ndarray:
    text = line.rstrip("\r\n")
    if text.startswith("ERR"):
        raise EvaluationError(text[3:].strip() or "simulator reported an error")
    parts = text.split()
    if not parts or parts[0] != "OK":
        raise ProtocolError(f"malformed response: {text!r}")
    try:
        m = int(parts[1])
        values = np.array([float(v) for v in parts[2:]])
    except (IndexError, ValueError) as exc:
        raise ProtocolError(f"malformed response: {text!r}") from exc
    if values.size != m:
        raise ProtocolError(f"response announces {m} values but carries {values.size}")
    if expected_dim is not None and m != expected_dim:
        raise ProtocolError(f"expected {expected_dim} outputs, got {m}")
    if not np.all(np.isfinite(values)):
        raise ProtocolError(f"non-finite value in response: {text!r}")
    return values


@dataclass(frozen=True)
class ExternalBlackBox:
    command: tuple[str, ...]
    bounds: Bounds
    output_dim: int = 1
    timeout_ms: int = 30_000

    def __post_init__(self):
        object.__setattr__(self, "command", tuple(self.command))
        if not self.command:
            raise ValueError("command must not be empty")
        if self.output_dim < 1:
            raise ValueError("output_dim must be >= 1")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")


class _ChildCrashed(Exception):
    pass


class ExternalSimulator:
    """One child process, strictly one request in flight.

    The child is started lazily. If it dies mid-request it is restarted once
    and the request retried. Timeouts and malformed responses kill the child
    so that a late or extra line can never be read as the answer to a later
    request; the next evaluation starts a fresh one.
    """

    def __init__(self, box: ExternalBlackBox):
        self.box = box
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue | None = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def bounds(self) -> Bounds:
        return self.box.bounds

    def start(self) -> None:
        env = dict(os.environ, BBOX_PROTOCOL=str(PROTOCOL_VERSION))
        try:
            self._proc = subprocess.Popen(
                self.box.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1, env=env,
            )
        except OSError as exc:
            raise EvaluationError(f"cannot start {self.box.command[0]!r}: {exc}") from exc
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc, self._lines), daemon=True).start()

    @staticmethod
    def _pump(proc, lines):
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.poll() is None:
                proc.stdin.close()
                proc.wait(timeout=1.0)
        except (OSError, subprocess.TimeoutExpired):
            pass
        if proc.poll() is None:
            proc.kill()
            proc.wait()

    def _drain_stale(self):
        while True:
            try:
                line = self._lines.get_nowait()
            except queue.Empty:
                return
            if line is None:
                raise _ChildCrashed()
            logger.warning("discarding unsolicited simulator output: %r", line)

    def _exchange(self, request: str) -> str:
        if self._proc is None or self._proc.poll() is not None:
            self.close()
            self.start()
        self._drain_stale()
        try:
            self._proc.stdin.write(request)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise _ChildCrashed() from exc
        try:
            line = self._lines.get(timeout=self.box.timeout_ms / 1000.0)
        except queue.Empty:
            self.close()
            raise EvaluationError(f"simulator did not answer within {self.box.timeout_ms} ms") from None
        if line is None:
            raise _ChildCrashed()
        return line

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.box.bounds.dim,):
            raise ValueError(f"expected {self.box.bounds.dim} inputs, got shape {x.shape}")
        if not self.box.bounds.contains(x, atol=1e-12):
            raise ValueError(f"{x} lies outside the bounds")
        request = format_request(x)
        for attempt in (1, 2):
            try:
                line = self._exchange(request)
                break
            except _ChildCrashed:
                self.close()
                if attempt == 2:
                    raise EvaluationError("simulator crashed twice in a row") from None
                logger.warning("simulator exited unexpectedly; restarting")
        try:
            return parse_response(line, self.box.output_dim)
        except ProtocolError:
            self.close()
            raise

    __call__ = evaluate


def evaluate_external(simulator: ExternalSimulator, x) -> np.ndarray:
    return simulator.evaluate(x)
