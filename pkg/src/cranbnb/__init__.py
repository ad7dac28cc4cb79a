"""Learned branch-and-bound for Cloud-RAN network power minimization."""

__version__ = "0.1.0"
