"""Feature-corpus extraction: segment raw CoT traces, score them with a
frozen causal language model, and emit the downstream toolkit's corpus
files (JSON-lines manifest + binary hidden-state sidecar)."""

__version__ = "0.1.0"
