"""Colour-parallel blocked Gibbs sampler for the multi-scale model."""

from .blocks import (AdaptiveProposal, BlockPlan, FootprintSpec, gmrf_block_conditional,
                     minimal_footprint)
from .chain import (ChainOutput, GibbsSampler, SamplerConfig, derive_rng, initial_state,
                    predictive_draws, run_chain)
from .model import (FileChunks, FixedPrior, GuidelineWarning, InMemoryChunks, ModelSpec,
                    ModelState, ScaleSpec, SpdePrior, constant_param_basis, eps_std,
                    scale_fields, scale_precision)
from .updates import (collapsed_theta0_logdensity, gibbs_sweep, reupdate_etak_tiles,
                      update_eta0_theta0, update_theta_eps, update_thetak_block)
