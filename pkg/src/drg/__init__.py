"""drg: desk-scale model-based RL with contrastive world-model learning."""

__version__ = "0.1.0"
