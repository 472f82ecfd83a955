"""Config-driven multimodal sequence-to-sequence experimentation."""

__version__ = "0.1.0"
