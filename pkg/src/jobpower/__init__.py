"""Job-level power attribution and prediction for heterogeneous HPC clusters."""

__version__ = "0.1.0"
