"""Graph-based feature selection and alarm prediction for vehicle telemetry."""

__version__ = "0.1.0"
