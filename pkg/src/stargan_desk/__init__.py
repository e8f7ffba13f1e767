"""Desk-scale multi-domain facial-expression translation toolkit."""

__version__ = "0.1.0"
