"""Context-aware recommendation with hybrid Q-learning, collaborative filtering and case reuse."""

__version__ = "0.1.0"
