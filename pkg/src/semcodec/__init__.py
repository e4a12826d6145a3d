"""Task-driven semantic compression with hierarchical actor-critic bit allocation."""

__version__ = "0.1.0"
