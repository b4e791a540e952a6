"""Federated deep-autoencoder anomaly detection simulator for IoT traffic."""

from . import autoencoder, data_pipeline, detection, federation, numeric

__version__ = "0.1.0"
