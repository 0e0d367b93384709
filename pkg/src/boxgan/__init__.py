"""Two-step GAN augmentation for object detection: boxes in, labeled images out."""

__version__ = "0.1.0"
