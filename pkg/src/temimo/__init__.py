"""Tensor-equivariant neural modules for MU-MIMO precoding and scheduling."""

__version__ = "0.1.0"
