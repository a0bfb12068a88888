"""Benchmark harness: dataset generation, training loops, reports, CLI."""
