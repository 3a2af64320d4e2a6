"""
Query-by-Vocalisation Feature Engine

Turns drum samples and vocal imitations into barkgrams, baseline features and
convolutional auto-encoder features, ranks library sounds against a vocal
query, and scores each feature set against listener similarity ratings with a
linear mixed-effects model.
"""

__version__ = "1.0.0"
__author__ = "QBV Engine Team"
