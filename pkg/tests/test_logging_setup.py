"""Tests for logging setup, async file handlers and the metrics stream."""

import json
import logging
import time

from tridepth.logging import (
    METRICS_LOGGER,
    StructuredLogger,
    close_metrics_stream,
    elapsed_ms,
    get_logger,
    open_metrics_stream,
    reset_step,
    setup_logging,
    start_step,
)
from tridepth.logging.setup import create_async_handler


class TestSetupLogging:
    def test_creates_log_directory(self, tmp_path):
        log_dir = tmp_path / "testlogs"
        setup_logging(level="DEBUG", log_dir=str(log_dir))
        assert log_dir.exists()

    def test_creates_log_file(self, tmp_path):
        log_dir = tmp_path / "testlogs2"
        setup_logging(level="DEBUG", log_dir=str(log_dir))
        get_logger("test.setup").info("setup test")
        time.sleep(0.2)
        assert (log_dir / "tridepth.log").exists()

    def test_creates_error_log_file(self, tmp_path):
        log_dir = tmp_path / "testlogs3"
        setup_logging(level="DEBUG", log_dir=str(log_dir))
        get_logger("test.error_setup").error("error test")
        time.sleep(0.2)
        assert (log_dir / "tridepth_error.log").exists()

    def test_env_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TRIDEPTH_LOG_LEVEL", "WARNING")
        setup_logging(log_dir=str(tmp_path / "envlogs"))
        assert logging.getLogger().level == logging.WARNING


class TestAsyncHandler:
    def test_creates_log_file(self, tmp_path):
        log_file = tmp_path / "test.log"
        handler, listener = create_async_handler(str(log_file))
        listener.start()
        logger = logging.getLogger("test.async_handler")
        logger.addHandler(handler)
        logger.setLevel(logging.DEBUG)
        logger.info("hello async")
        time.sleep(0.1)
        listener.stop()
        logger.removeHandler(handler)
        assert "hello async" in log_file.read_text()

    def test_rotates_on_max_bytes(self, tmp_path):
        log_file = tmp_path / "rotate.log"
        handler, listener = create_async_handler(str(log_file), max_bytes=100, backup_count=2)
        listener.start()
        logger = logging.getLogger("test.rotate")
        logger.addHandler(handler)
        logger.setLevel(logging.DEBUG)
        for i in range(50):
            logger.info(f"line {i} " + "x" * 50)
        time.sleep(0.2)
        listener.stop()
        logger.removeHandler(handler)
        assert len(list(tmp_path.glob("rotate.log*"))) > 1

    def test_error_level_filters(self, tmp_path):
        log_file = tmp_path / "error.log"
        handler, listener = create_async_handler(str(log_file), level=logging.ERROR)
        listener.start()
        logger = logging.getLogger("test.error_filter")
        logger.addHandler(handler)
        logger.setLevel(logging.DEBUG)
        logger.info("info message")
        logger.error("error message")
        time.sleep(0.1)
        listener.stop()
        logger.removeHandler(handler)
        content = log_file.read_text()
        assert "info message" not in content
        assert "error message" in content


class TestMetricsStream:
    def test_writes_json_lines(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        handler = open_metrics_stream(path)
        metrics = get_logger(METRICS_LOGGER)
        metrics.info("step", step=0, loss_g=0.5)
        metrics.info("step", step=1, loss_g=0.25)
        close_metrics_stream(handler)
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert [r["step"] for r in lines] == [0, 1]
        assert lines[1]["loss_g"] == 0.25

    def test_metrics_do_not_propagate(self, tmp_path):
        handler = open_metrics_stream(tmp_path / "m.jsonl")
        assert logging.getLogger(METRICS_LOGGER).propagate is False
        close_metrics_stream(handler)


class TestPublicAPI:
    def test_get_logger_accessible(self):
        assert isinstance(get_logger("test.api"), StructuredLogger)

    def test_step_tracking_accessible(self):
        start_step(0)
        assert elapsed_ms() is not None
        reset_step()
