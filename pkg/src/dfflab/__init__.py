"""Interactive learning with discriminative feature feedback and bounded exceptions."""

__version__ = "0.1.0"
