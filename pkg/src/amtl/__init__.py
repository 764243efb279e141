"""Speaker- and age-invariant acoustic modelling with adversarial multi-task learning.

A small numpy engine for training a shared TDNN feature generator against
gradient-reversed speaker and age discriminators.
"""

__version__ = "0.1.0"
