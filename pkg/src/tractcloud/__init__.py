"""Registration-free streamline parcellation with local-global context
features: synthetic data generation, exact MDF neighbor search, a
point-cloud classifier trained with affine-transform augmentation, and
tract-level evaluation metrics."""

__version__ = "0.1.0"
