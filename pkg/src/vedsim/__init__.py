"""Slot-level simulator and online scheduler for V2V-assisted vehicular federated learning."""

__version__ = "0.1.0"
