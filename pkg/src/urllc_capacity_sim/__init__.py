"""Downlink URLLC/best-effort system-level simulator with a capacity-search harness."""
__version__ = '0.1.0'
