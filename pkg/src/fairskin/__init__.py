"""Three-level resampling pipeline for fair conditional image generation.

Level 1 rebalances the training data seen by a diffusion model, level 2
regularizes the model so class-conditional outputs share structure, and
level 3 rebalances the downstream classifier with synthetic augmentation
and dynamic per-group loss weights.  Fairness is scored with distribution
distances and parity gaps computed per demographic group.
"""

__version__ = "0.1.0"
