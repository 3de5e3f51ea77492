"""Specification-to-test-case security analysis pipeline for cellular protocol specs."""

__version__ = "0.1.0"
