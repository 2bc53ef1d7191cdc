"""Comparison methods: 1-D k-means, uniform fake quantization, trained ternary, clustered pipeline."""

from .kmeans import KMeansResult, kmeans_1d
from .quant import TernaryLayer, ternary_forward, uniform_fake_quant, uniform_grid

__all__ = ["KMeansResult", "kmeans_1d", "TernaryLayer", "ternary_forward", "uniform_fake_quant", "uniform_grid"]
