"""semmatch: Siamese bag-of-ngrams semantic product search at desk scale."""

__version__ = "0.1.0"
