"""Attack-resilient switching consensus for planar multi-robot teams."""

__version__ = "0.1.0"
