"""2.5D structural damage extraction from segmented multi-view imagery."""

__version__ = "0.1.0"
