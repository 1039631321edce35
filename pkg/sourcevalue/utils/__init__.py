"""Utility functions for the Source Value engine."""

from .logger import setup_logger
from .rng import substream, purpose_key

__all__ = ["setup_logger", "substream", "purpose_key"]
