"""Spoken video grounding with contrastive and video-guided curriculum pretraining."""

__version__ = "0.1.0"
