"""Entropy-regularized GradCAM training and CAM interpretability measures."""

__version__ = "0.1.0"
