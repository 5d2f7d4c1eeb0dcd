"""Goal recognition as metric learning for online dynamic goal sets."""

__version__ = "0.1.0"
