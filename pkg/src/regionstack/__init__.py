"""Region-wise stacked elastic-net ensembles for multi-site age prediction."""

__version__ = "0.1.0"
