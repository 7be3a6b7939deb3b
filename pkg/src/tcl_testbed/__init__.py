"""Virtual air-conditioner load-coordination testbed."""

__version__ = "0.1.0"

