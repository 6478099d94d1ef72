"""Embedding export adapter.

Runs a frozen text or image encoder over clue sentences or manifest images
and writes the results in the pipeline's .geb store format (float32
little-endian matrix plus a JSON id sidecar). The pipeline consumes the
files directly; nothing here imports the pipeline package.
"""

__version__ = "0.1.0"
