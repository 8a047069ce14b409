"""Federated parameter-efficient fine-tuning benchmark at desk scale."""

__version__ = "0.1.0"
