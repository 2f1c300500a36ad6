"""Movement quality assessment from skeletal joint-orientation data."""

__version__ = "0.1.0"
