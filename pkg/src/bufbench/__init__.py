"""bufbench: synthetic buffer-write benchmarks, an exact labeling oracle,
a from-scratch memory-network classifier, and an analyzer scoring harness."""

__version__ = "0.1.0"
