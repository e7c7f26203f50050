"""MR augmentation pipeline: brain maps, conditional GAN synthesis, cascaded
2D U-Net segmentation, evaluation metrics, and a blinded reader-study service.
"""

__version__ = "0.1.0"
