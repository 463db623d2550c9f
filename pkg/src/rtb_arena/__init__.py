"""Second-price auction replay, budget-constrained bidding strategies, and
a benchmark harness for comparing them on logged or synthetic impression
streams."""

__version__ = "0.1.0"
