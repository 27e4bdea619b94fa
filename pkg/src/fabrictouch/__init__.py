"""Multimodal tactile fabric classification from vision, audio and proprioception."""

__version__ = "0.1.0"
