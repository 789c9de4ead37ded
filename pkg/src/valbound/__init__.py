"""Double-sided bounds on optimal value functions and their use in training."""

__version__ = "0.1.0"
