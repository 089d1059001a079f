"""Event-based pupil tracking with a conv encoder, Bi-GRU and a selective state-space layer."""

__version__ = "0.1.0"
