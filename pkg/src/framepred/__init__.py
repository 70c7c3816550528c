"""Multi-scale convolutional next-frame prediction with adversarial and gradient-difference losses."""

__version__ = "0.1.0"
