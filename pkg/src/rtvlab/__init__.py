"""Packet-level laboratory for loss-resilient real-time video transport."""

__version__ = "0.1.0"
