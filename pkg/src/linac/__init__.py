from .rng import REFERENCE_KEY
