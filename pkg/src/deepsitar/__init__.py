"""Growth-curve autoencoder: a spline decoder warped by per-individual
size/tempo/velocity effects, with a small dense network as encoder."""

__version__ = "0.1.0"
