"""Decision-based attack engine with asymmetric query-cost accounting."""

__version__ = "0.1.0"
