"""Conditional latent Gaussian models.

Fits latent Gaussian models with a nested-Laplace engine, embeds the
engine's conditional marginal likelihood inside a Metropolis-Hastings
sampler over the conditioned parameters, and averages the conditional
marginals of everything else over the chain.
"""

__version__ = "0.1.0"
