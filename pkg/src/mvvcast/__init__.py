"""Energy-minimal multi-view video multicast over OFDMA."""

__version__ = "0.1.0"
