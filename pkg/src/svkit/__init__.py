"""Speaker-verification backend toolkit: features, GMM/i-vector modelling,
pooling kernels, LDA/PLDA scoring, score normalization, fusion and metrics."""

__version__ = "0.1.0"
