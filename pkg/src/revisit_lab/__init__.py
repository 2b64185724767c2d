"""Revisitation-retention laboratory: synthetic logs, save->revisit attribution,
revisit popularity features, a multi-task ranker and offline analyses."""

__version__ = "0.1.0"
