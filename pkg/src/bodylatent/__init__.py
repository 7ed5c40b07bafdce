"""Shape/pose-disentangled body mesh autoencoder at desk scale."""

__version__ = "0.1.0"
