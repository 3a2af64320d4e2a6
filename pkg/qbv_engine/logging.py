"""
Logging configuration for the QBV feature engine.
"""

import logging
from typing import Any, Dict, List, Optional
from rich.logging import RichHandler


def setup_logging(level: str = "INFO") -> None:
    """Configure clean, simple logging output."""

    logging.basicConfig(
        format="%(message)s",
        level=getattr(logging, level.upper(), logging.INFO),
        handlers=[RichHandler(
            rich_tracebacks=True,
            show_time=True,
            show_path=False,
            show_level=False,
            markup=True
        )],
        force=True  # Override any existing configuration
    )

    # Silence noisy third-party loggers
    logging.getLogger("numba").setLevel(logging.WARNING)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("librosa").setLevel(logging.WARNING)


def get_logger(name: str):
    """Get a standard logger instance."""
    return logging.getLogger(name)


class TrainingMetricsLogger:
    """Logger for tracking per-epoch auto-encoder losses."""

    def __init__(self, run_name: str):
        self.run_name = run_name
        self.logger = get_logger("training")
        self.metrics: Dict[str, Any] = {
            "epochs": 0,
            "batches": 0,
            "best_epoch": None,
            "best_val_loss": None,
            "training_time": 0.0,
        }
        self.train_losses: List[float] = []
        self.val_losses: List[float] = []

    def log_epoch(self, epoch: int, train_loss: float, val_loss: float,
                  batches: int, epoch_time: float, improved: bool) -> None:
        """Log a finished epoch."""
        self.metrics["epochs"] = epoch
        self.metrics["batches"] += batches
        self.metrics["training_time"] += epoch_time
        self.train_losses.append(train_loss)
        self.val_losses.append(val_loss)
        if improved:
            self.metrics["best_epoch"] = epoch
            self.metrics["best_val_loss"] = val_loss

        # Individual epochs only at DEBUG to avoid spam
        marker = " *" if improved else ""
        self.logger.debug(
            f"{self.run_name} epoch {epoch} | train MSE {train_loss:.6f} | "
            f"val MSE {val_loss:.6f} | {epoch_time:.2f}s{marker}"
        )

    def log_early_stop(self, epoch: int, patience: int) -> None:
        """Log the early-stopping decision."""
        self.logger.info(
            f"⏹️  {self.run_name}: no validation improvement for {patience} epochs, "
            f"stopping at epoch {epoch}"
        )

    def log_summary(self) -> None:
        """Log the best checkpoint summary."""
        best_loss: Optional[float] = self.metrics["best_val_loss"]
        self.logger.info(
            f"🏁 {self.run_name}: {self.metrics['epochs']} epochs, best val MSE "
            f"{best_loss if best_loss is None else f'{best_loss:.6f}'} at epoch "
            f"{self.metrics['best_epoch']} | {self.metrics['training_time']:.1f}s"
        )
