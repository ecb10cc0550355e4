"""Prediction-and-sensing based spectrum sharing: models and beamforming optimizer."""

__version__ = "0.1.0"
