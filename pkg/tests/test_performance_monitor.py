"""Run metrics recorded from the worker pool."""

from concurrent.futures import ThreadPoolExecutor

import pytest

from qbv_engine.performance_monitor import PerformanceMonitor


def test_concurrent_records_are_all_counted():
    monitor = PerformanceMonitor()

    def record(_):
        for _ in range(2000):
            monitor.record_clip_processed(0.001)
            monitor.record_fit(0.002)
            monitor.record_stage("extract", 0.001)

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(record, range(8)))

    metrics = monitor.metrics.to_dict()
    assert metrics["clips_processed"] == 16000
    assert metrics["fits_run"] == 16000
    assert metrics["total_fit_time"] == pytest.approx(32.0)
    assert metrics["average_clip_time"] == pytest.approx(0.001)
    assert metrics["stages"] == {"extract": pytest.approx(16.0)}


def test_stages_keep_first_use_order_and_reset_clears_them():
    monitor = PerformanceMonitor()
    with monitor.stage("ingest"):
        pass
    monitor.record_stage("evaluate", 1.0)
    monitor.record_stage("ingest", 1.0)
    monitor.record_training(epochs=12)

    metrics = monitor.metrics.to_dict()
    assert list(metrics["stages"]) == ["ingest", "evaluate"]
    assert metrics["epochs_trained"] == 12

    monitor.reset()
    assert monitor.metrics.to_dict()["stages"] == {}
