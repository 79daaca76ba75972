"""Chest X-ray infection mapping toolkit.

Ingests radiographs, trains encoder-decoder segmentation networks with a
hybrid focal+dice loss, renders probabilistic infection maps, detects
positives from the probability field, evaluates with a confusion-matrix
metric suite, and orchestrates a two-stage human-machine annotation loop.
"""

__version__ = "0.1.0"
