"""Agentic machine-translation quality scoring with anchor-based calibration,
plus the meta-evaluation statistics used to validate metrics against human
judgments."""

__version__ = "0.1.0"
