"""Change-of-variables density evaluation for flows of every kind."""

__version__ = "0.1.0"
