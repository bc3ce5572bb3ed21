"""Multi-behavior recommendation with gated latent-factor experts."""
__version__ = "0.1.0"
