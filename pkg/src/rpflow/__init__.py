"""Flow matching from a Gaussian source process to a single observed random field."""

__version__ = "0.1.0"
