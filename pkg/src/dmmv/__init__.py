"""Decomposition-based multi-modal-view forecasting for long-horizon series.

A univariate window becomes both a numerical sequence and a period-stacked
grayscale image; a toy masked autoencoder forecasts the periodic structure
from the image while a linear or patch-transformer model forecasts the trend,
and a learned sigmoid gate fuses the two horizon predictions. Two assemblies
are provided: a fixed moving-average decomposition and an adaptive
backcast-residual decomposition.
"""

__version__ = "0.1.0"
