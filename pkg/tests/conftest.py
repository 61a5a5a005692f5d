from __future__ import annotations

import numpy as np
import pytest

from distmon.core import MessageLedger, RngContext, StepContext, StreamTrace

_RESULTS: list[tuple[str, bool, str]] = []


class StubStream:
    """Stand-in for the node stream that replays fixed words / uniforms."""

    def __init__(self, words=(), uniforms=()):
        self.words = list(words)
        self.uniforms = list(uniforms)

    def integers(self, lo, hi, size=None, dtype=np.int64):
        n = int(np.prod(size))
        out, self.words = self.words[:n], self.words[n:]
        return np.array(out, dtype=dtype).reshape(size)

    def random(self, size=None):
        out, self.uniforms = self.uniforms[:size], self.uniforms[size:]
        return np.array(out, dtype=np.float64)


@pytest.fixture
def stub_ctx():
    def make(values, delta=None, words=(), uniforms=(), n=None):
        values = np.asarray(values, dtype=np.int64)
        rng = RngContext(0)
        rng.nodes = StubStream(words, uniforms)
        ctx = StepContext.single(values, delta or int(values.max()), rng, MessageLedger())
        if n is not None:
            from distmon.core import LogParams
            ctx.log = LogParams.for_nodes(n)
        return ctx
    return make


@pytest.fixture
def record_criterion():
    def rec(name: str, ok: bool, detail: str = ""):
        _RESULTS.append((name, bool(ok), detail))
    return rec


def make_trace(rows, delta=None) -> StreamTrace:
    rows = np.asarray(rows, dtype=np.int64)
    return StreamTrace(rows, delta or int(rows.max()))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
