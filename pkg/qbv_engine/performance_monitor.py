"""
Performance monitoring utilities for the QBV feature engine.
"""

import threading
import time
from contextlib import contextmanager
from typing import Dict, Iterator, List, Optional, Any
from dataclasses import dataclass, field
from .logging import get_logger


@dataclass
class PerformanceMetrics:
    """Performance metrics tracking."""

    # Clip processing
    clips_processed: int = 0
    total_clip_time: float = 0.0
    average_clip_time: Optional[float] = None

    # Model fitting
    fits_run: int = 0
    total_fit_time: float = 0.0

    # Auto-encoder training
    training_runs: int = 0
    epochs_trained: int = 0

    # Pipeline stages
    stage_times: Dict[str, float] = field(default_factory=dict)
    stage_order: List[str] = field(default_factory=list)

    def update_averages(self):
        """Update calculated averages."""
        if self.clips_processed > 0:
            self.average_clip_time = self.total_clip_time / self.clips_processed

    def to_dict(self) -> Dict[str, Any]:
        """Convert metrics to dictionary for logging."""
        self.update_averages()
        return {
            "clips_processed": self.clips_processed,
            "average_clip_time": round(self.average_clip_time or 0, 4),
            "fits_run": self.fits_run,
            "total_fit_time": round(self.total_fit_time, 3),
            "training_runs": self.training_runs,
            "epochs_trained": self.epochs_trained,
            "stages": {name: round(self.stage_times[name], 3) for name in self.stage_order},
        }


class PerformanceMonitor:
    """Performance monitoring and metrics collection."""

    def __init__(self):
        self.logger = get_logger("performance")
        self.metrics = PerformanceMetrics()
        self.start_time = time.time()
        # workers on the extraction pool record concurrently
        self._lock = threading.Lock()

    def reset(self):
        with self._lock:
            self.metrics = PerformanceMetrics()
            self.start_time = time.time()

    def record_clip_processed(self, processing_time: float):
        """Record one clip ingested or featurised."""
        with self._lock:
            self.metrics.clips_processed += 1
            self.metrics.total_clip_time += processing_time

    def record_fit(self, fit_time: float):
        """Record one mixed-model fit."""
        with self._lock:
            self.metrics.fits_run += 1
            self.metrics.total_fit_time += fit_time

    def record_training(self, epochs: int):
        """Record a finished auto-encoder training run."""
        with self._lock:
            self.metrics.training_runs += 1
            self.metrics.epochs_trained += epochs

    def record_stage(self, name: str, duration: float):
        with self._lock:
            if name not in self.metrics.stage_times:
                self.metrics.stage_order.append(name)
                self.metrics.stage_times[name] = 0.0
            self.metrics.stage_times[name] += duration

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time a pipeline stage."""
        start = time.time()
        try:
            yield
        finally:
            self.record_stage(name, time.time() - start)

    def get_runtime_seconds(self) -> float:
        """Get total runtime in seconds."""
        return time.time() - self.start_time

    def log_performance_summary(self):
        """Log a summary of performance metrics."""
        runtime = self.get_runtime_seconds()
        metrics_dict = self.metrics.to_dict()

        self.logger.info(
            f"📈 Performance Summary: Runtime {runtime:.1f}s, "
            f"clips {metrics_dict['clips_processed']}, fits {metrics_dict['fits_run']}, "
            f"epochs {metrics_dict['epochs_trained']}"
        )
        if metrics_dict["stages"]:
            stages = ", ".join(f"{name} {seconds:.1f}s" for name, seconds in metrics_dict["stages"].items())
            self.logger.info(f"⏱️  Stages: {stages}")


# Global performance monitor instance
performance_monitor = PerformanceMonitor()
