"""Source Value - equitable valuation of training data sources."""

__version__ = "1.0.0"
__author__ = "Source Value Team"
