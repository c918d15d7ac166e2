"""Feature Weaken and baseline augmentations on a small numpy autodiff stack."""

__version__ = "0.1.0"
