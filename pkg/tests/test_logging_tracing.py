"""Tests for tridepth.logging.tracing -- @logged decorator."""

from __future__ import annotations

import logging
import time

import numpy as np
import pytest
import torch

from tridepth.logging.tracing import (
    _call_depth,
    _fmt_args,
    _fmt_time,
    _fmt_val,
    logged,
)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _capture_logger(monkeypatch, enabled=True):
    """Return (logger_mock, records) that captures _log calls."""
    records: list[dict] = []

    class FakeLogger:
        def isEnabledFor(self, level):
            return enabled

        def _log(self, level, msg, args, kwargs):
            records.append({"level": level, "msg": msg, "extra": dict(kwargs)})

    fake = FakeLogger()
    monkeypatch.setattr("tridepth.logging.tracing.get_logger", lambda name: fake)
    return fake, records


# ---------------------------------------------------------------------------
# _fmt_val / _fmt_args / _fmt_time
# ---------------------------------------------------------------------------

class TestFmtVal:
    def test_tensor_summary(self):
        assert _fmt_val(torch.zeros(2, 3, dtype=torch.float64)) == "<tensor (2, 3) float64>"

    def test_scalar_tensor_shows_value(self):
        assert _fmt_val(torch.tensor(0.25)) == "<tensor 0.25>"

    def test_ndarray_summary(self):
        assert _fmt_val(np.zeros((4,), dtype=np.int64)) == "<ndarray (4,) int64>"

    def test_path_is_plain(self, tmp_path):
        assert _fmt_val(tmp_path / "meta.json") == str(tmp_path / "meta.json")

    def test_list_summary(self):
        assert _fmt_val([1, 2, 3]) == "<list len=3>"

    def test_dict_summary(self):
        assert _fmt_val({"a": 1}) == "<dict len=1>"

    def test_truncation(self):
        result = _fmt_val("x" * 200)
        assert len(result) == 80
        assert result.endswith("...")

    def test_short_value(self):
        assert _fmt_val(42) == "42"


class TestFmtArgs:
    def test_skip_self(self):
        class Foo:
            def bar(self, x, y):
                pass
        result = _fmt_args(Foo.bar, (Foo(), 1, 2), {})
        assert "x=1" in result
        assert "y=2" in result
        assert "self" not in result

    def test_kwargs(self):
        def fn():
            pass
        assert "seed=3" in _fmt_args(fn, (), {"seed": 3})


class TestFmtTime:
    def test_milliseconds(self):
        assert _fmt_time(0.0123) == "+12.3ms"

    def test_seconds(self):
        assert _fmt_time(2.5) == "+2.5s"


# ---------------------------------------------------------------------------
# @logged
# ---------------------------------------------------------------------------

class TestLoggedSync:
    def test_entry_and_exit(self, monkeypatch):
        _, records = _capture_logger(monkeypatch)

        @logged()
        def render():
            return "img"

        assert render() == "img"
        assert records[0]["msg"].endswith("render")
        assert records[0]["msg"].startswith("->")
        assert records[-1]["msg"].startswith("<-")
        assert "_elapsed" in records[-1]["extra"]

    def test_log_args(self, monkeypatch):
        _, records = _capture_logger(monkeypatch)

        @logged(log_args=True)
        def gen(n_scenes, seed=0):
            return n_scenes

        gen(4, seed=9)
        assert "n_scenes=4" in records[0]["msg"]
        assert "seed=9" in records[0]["msg"]

    def test_exception_restores_depth(self, monkeypatch):
        _, records = _capture_logger(monkeypatch)

        @logged()
        def fail():
            raise RuntimeError("boom")

        assert _call_depth.get() == 0
        with pytest.raises(RuntimeError, match="boom"):
            fail()
        assert _call_depth.get() == 0
        assert any("FAILED" in r["msg"] and r["level"] == logging.ERROR for r in records)

    def test_nested_calls_increase_depth(self, monkeypatch):
        _, records = _capture_logger(monkeypatch)

        @logged()
        def inner():
            return 1

        @logged()
        def outer():
            return inner()

        outer()
        depths = [r["extra"]["_depth"] for r in records if r["msg"].startswith("->")]
        assert depths == [0, 1]

    def test_slow_warning(self, monkeypatch):
        _, records = _capture_logger(monkeypatch)

        @logged(slow_ms=1)
        def slow_fn():
            time.sleep(0.01)

        slow_fn()
        assert any(r["level"] == logging.WARNING and "SLOW" in r["msg"] for r in records)

    def test_disabled_level_calls_through(self, monkeypatch):
        _, records = _capture_logger(monkeypatch, enabled=False)

        @logged()
        def quiet(x):
            return x * 2

        assert quiet(3) == 6
        assert records == []

    def test_preserves_metadata(self, monkeypatch):
        _capture_logger(monkeypatch)

        @logged()
        def documented():
            """Docstring."""

        assert documented.__name__ == "documented"
        assert documented.__doc__ == "Docstring."


class TestLoggedRejectsAsync:
    def test_coroutine_function(self):
        async def fetch():
            return 1

        with pytest.raises(TypeError, match="synchronous"):
            logged()(fetch)

    def test_async_generator(self):
        async def stream():
            yield 1

        with pytest.raises(TypeError, match="synchronous"):
            logged()(stream)
