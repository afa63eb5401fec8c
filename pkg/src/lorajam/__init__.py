"""Desk-scale simulator for LoRaWAN jamming, wormhole replay and detection."""

__version__ = "0.1.0"
