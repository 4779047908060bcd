"""Exporter: converts checkpoints to LGTC model containers and records
reference forward passes for cross-implementation parity checks."""

__version__ = "0.1.0"
