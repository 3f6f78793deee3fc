"""Batch figure rendering for preference-sweep and hypervolume artifacts.

Reads the documented CSV/JSONL files emitted by training runs and writes
static images; it never talks to the training code itself.
"""

__version__ = "0.1.0"
