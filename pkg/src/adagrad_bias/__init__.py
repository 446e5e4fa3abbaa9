"""Implicit bias of diagonal AdaGrad versus gradient descent on separable linear classification."""

__version__ = "0.1.0"
