"""Structure-aware data augmentation toolkit for triple-annotated corpora."""

__version__ = "0.1.0"
