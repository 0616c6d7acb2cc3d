"""Tests for independence of irrelevant alternatives in similarity-choice data."""

__version__ = "0.1.0"
