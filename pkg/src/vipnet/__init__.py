"""Slotted-time simulator and stability analyzer for VIP-driven caching networks."""

__version__ = "0.1.0"
