"""Multi-task micro-LLM recommender with collaborative embedding fusion."""

__version__ = "0.1.0"
