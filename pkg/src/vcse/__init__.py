"""Two-stage visual-contextual speaker extraction."""

__version__ = "0.1.0"
