"""Speech-derived multimodal features and multi-task mental-health prediction at desk scale."""

__version__ = "0.1.0"
