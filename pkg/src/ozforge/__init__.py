"""Wizard-of-Oz experimentation platform: subject-side recording, live
wizard assistance over a dual-channel link, and deterministic replay."""

__version__ = "0.1.0"
