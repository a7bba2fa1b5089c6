"""Scenario-based multiple-choice QA: implicitly supervised sparse retrieval
joined with a multi-paragraph fusion reader."""

__version__ = "0.1.0"
