"""Fast-reaction approximation of the triangular SKT cross-diffusion system."""

__version__ = "0.1.0"
