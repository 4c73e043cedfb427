"""Saliency-map adversarial attacks against small feedforward classifiers."""

__version__ = "0.1.0"
