"""Compression of spiking neural networks for neuromorphic deployment.

Learnable codebooks, Fisher-based channel pruning, baselines and
deployability metrics on a small numpy autodiff engine.
"""

__version__ = "0.1.0"
