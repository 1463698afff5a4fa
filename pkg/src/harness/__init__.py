"""Data model, synthetic data, training, metrics and experiment drivers."""
