"""O-RAN slicing simulator with sharpness-aware multi-agent actor-critic training."""

__version__ = "0.1.0"
