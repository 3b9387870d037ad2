"""Tests for logging formatters."""

import json
import logging

from tridepth.logging.formatters import JsonFormatter, PlainFormatter, SmartFormatter


def _make_record(msg="test message", level=logging.INFO, name="tridepth.trainer", **extra):
    record = logging.LogRecord(
        name=name, level=level, pathname="", lineno=0,
        msg=msg, args=(), exc_info=None,
    )
    record.extra_data = extra
    return record


class TestSmartFormatter:
    def test_output_contains_module_abbrev(self):
        line = SmartFormatter().format(_make_record(name="tridepth.render"))
        assert "RND" in line
        assert "render" in line

    def test_output_contains_kv_pairs(self):
        line = SmartFormatter().format(_make_record(loss_g=0.75, reg="gradpen"))
        assert "loss_g=0.75" in line
        assert "reg=gradpen" in line

    def test_floats_are_shortened(self):
        line = SmartFormatter().format(_make_record(loss=0.123456789123))
        assert "loss=0.123457" in line

    def test_output_contains_level(self):
        line = SmartFormatter().format(_make_record(level=logging.WARNING))
        assert "WARNI" in line or "WARNING" in line

    def test_step_pair_prepended(self):
        record = _make_record(loss=1.0)
        record.step = 42
        line = SmartFormatter().format(record)
        assert line.index("step=42") < line.index("loss=1")


class TestPlainFormatter:
    def test_no_ansi_codes(self):
        line = PlainFormatter().format(_make_record(name="tridepth.camera"))
        assert "\033[" not in line

    def test_contains_full_date(self):
        line = PlainFormatter().format(_make_record())
        assert "-" in line.split(" ")[0]

    def test_contains_kv_pairs(self):
        line = PlainFormatter().format(_make_record(attempt=3))
        assert "attempt=3" in line


class TestJsonFormatter:
    def test_one_json_object_with_extras(self):
        record = _make_record("step", **{"loss_d": 1.5, "sel/raw": 2})
        record.step = 7
        payload = json.loads(JsonFormatter().format(record))
        assert payload["msg"] == "step"
        assert payload["step"] == 7
        assert payload["loss_d"] == 1.5
        assert payload["sel/raw"] == 2

    def test_private_keys_dropped(self):
        payload = json.loads(JsonFormatter().format(_make_record(_depth=1, keep=1)))
        assert "_depth" not in payload
        assert payload["keep"] == 1


class TestFormatterMutationSafety:
    def test_second_formatter_sees_trace_metadata(self):
        """Both formatters must produce identical trace output from the same record."""
        record = logging.LogRecord(
            name="tridepth.test", level=logging.DEBUG, pathname="", lineno=0,
            msg="<- test_func", args=(), exc_info=None,
        )
        record.extra_data = {"_depth": 2, "_elapsed": "+42.0ms", "key": "val"}

        smart_output = SmartFormatter().format(record)
        plain_output = PlainFormatter().format(record)

        assert "| | " in smart_output
        assert "+42.0ms" in smart_output
        assert "| | " in plain_output
        assert "+42.0ms" in plain_output
        assert "key=val" in smart_output
        assert "key=val" in plain_output
