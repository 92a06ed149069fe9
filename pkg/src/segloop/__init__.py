"""Interactive segmentation refinement: click encodings, sparse-label
fine-tuning, uncertainty-guided patch queries, and a serving layer."""

__version__ = "0.1.0"
