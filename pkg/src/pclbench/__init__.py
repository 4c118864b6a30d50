"""Physics constrained learning and penalty-method benchmarks for discretized PDEs."""

__version__ = "0.1.0"
