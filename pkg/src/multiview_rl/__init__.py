"""Multi-view actor-critic learning with critic-gated attention fusion."""

__version__ = "0.1.0"
