"""Two-stage semi-supervised sound event detection: mean-teacher pre-labeling and noisy-student self-training."""

__version__ = "0.1.0"
