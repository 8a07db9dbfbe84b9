"""Quality-aware diffusion cleanup for skeletal motion capture data."""

__version__ = "0.1.0"
