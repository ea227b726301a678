"""Random perforated domains, capacity-density measures and Darcy-limit checks."""

__version__ = "0.1.0"
