"""Lip-reading recognizer: ResNet3D frontend, Conformer-family encoders, bi-directional decoder."""

__version__ = "0.1.0"
