"""Double-heralded entangling operation between cavity-coupled emitters and cluster growth."""

__version__ = "0.1.0"
