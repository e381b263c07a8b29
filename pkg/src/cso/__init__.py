"""Shape optimization over discrete-convex and conformally convex domains."""

__version__ = "0.1.0"
