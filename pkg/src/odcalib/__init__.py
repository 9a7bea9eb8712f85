"""OD demand calibration with a count-ratio regularized metamodel."""

__version__ = "0.1.0"
