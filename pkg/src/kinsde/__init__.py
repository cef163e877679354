"""Kinematics-guided latent SDE models for vehicle trajectory generation."""

__version__ = "0.1.0"
