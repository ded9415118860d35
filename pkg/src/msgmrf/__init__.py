"""Multi-scale nonstationary GMRF spatial model with a colour-parallel Gibbs sampler."""

__version__ = "0.1.0"
