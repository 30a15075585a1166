"""Fitting a smooth manifold to noisy samples: PCA subspace, local discs,
denoised nets, a disc atlas with a partition of unity, and the output
manifold defined as the zero set of a blended normal field."""

__version__ = "0.1.0"
