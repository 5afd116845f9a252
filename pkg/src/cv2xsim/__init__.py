"""C-V2X mode 4 sidelink simulator with standard and chained SPS scheduling."""

__version__ = "0.1.0"
