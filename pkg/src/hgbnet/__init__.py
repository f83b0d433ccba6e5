"""Hemoglobin level and anemia degree prediction from irregular clinical
time series with missing values."""

__version__ = "0.1.0"
