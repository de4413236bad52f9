"""Skin lesion segmentation: occlusion augmentation, a compact encoder-decoder,
multi-resolution ensembling and Jaccard evaluation."""

__version__ = "0.1.0"
