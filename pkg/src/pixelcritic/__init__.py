"""Per-pixel real/generated error detection and sample ranking."""

__version__ = "0.1.0"
