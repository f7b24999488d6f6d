"""End-to-end summarization of interleaved multi-thread texts."""

__version__ = "0.1.0"
