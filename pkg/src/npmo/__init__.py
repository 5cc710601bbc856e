"""Policy-guided tree search for non-prehensile multi-object rearrangement."""

__version__ = "0.1.0"
