"""Experiment orchestration, metrics, configuration and the command line."""
from .config import ConfigError, RunConfig
from .metrics import EvalReport, evaluate_spans, iou

__all__ = ["ConfigError", "EvalReport", "RunConfig", "evaluate_spans", "iou"]
