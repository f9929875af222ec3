"""Mix-attention sequential recommender with layer-wise noise stability regularization."""

__version__ = "0.1.0"
