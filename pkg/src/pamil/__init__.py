"""Policy-driven sequential instance sampling for multi-instance learning on feature bags."""

__version__ = "0.1.0"
