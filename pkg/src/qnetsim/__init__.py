"""Control plane and deterministic simulator for a metro-scale quantum network."""

__version__ = "0.1.0"
