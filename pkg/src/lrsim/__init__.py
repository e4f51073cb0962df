"""Learned road simulator: adversarial frame autoencoder plus an
action-conditioned recurrent transition model, with a live steering
service on top."""

__version__ = "0.1.0"
