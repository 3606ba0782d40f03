"""darwinnet: tournament-selected detect/classify/segment pipeline with
morphometry and pairwise statistics, on procedurally generated scenes."""

__version__ = "0.1.0"
