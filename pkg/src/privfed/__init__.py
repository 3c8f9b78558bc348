"""Federated averaging with pluggable privacy: SVT-based differential
privacy and a minimal leveled CKKS backend, plus a centralized baseline,
synthetic cohort generation, simulation/TCP transports, and a metrics and
timing harness."""

__version__ = "0.1.0"
