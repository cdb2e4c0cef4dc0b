"""Graph neural networks trained under a stability constraint with a primal-dual method."""

__version__ = "0.1.0"
