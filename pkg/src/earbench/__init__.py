"""earbench: closed-set ear identification under limited training data.

Augmentation engine, small CNN training with full/selective learning,
LBP/HOG descriptor baselines and the CMC/Rank-k/AUCMC evaluation protocol.
"""

__version__ = "0.1.0"
