"""Single-step entry points of the sampler.

Each function applies one update of the sweep to ``state`` in place and
returns it; they share the plans and proposals held by a
:class:`~msgmrf.sampler.chain.GibbsSampler`.
"""

from __future__ import annotations

import numpy as np

from ..colouring import Colouring, Tiling
from .blocks import BlockPlan, RowsProvider
from .chain import TAG_THETA0, TAG_THETAK, GibbsSampler


def collapsed_theta0_logdensity(sampler: GibbsSampler, state, proposal_theta0):
    """``(log density, CanonicalGaussian)`` for a proposed ``(log sigma0, log rho0)``."""
    return sampler.collapsed_theta0_logdensity(state, proposal_theta0)


def update_eta0_theta0(sampler: GibbsSampler, state, rng_seed: int):
    """MH step on theta0 from the collapsed density; eta0 is always redrawn."""
    w = sampler.data_weights(state)
    fits, total = sampler.fits(state)
    res = sampler.theta_block(state, 0, 0, sampler.plan0, w, total, rng_seed, TAG_THETA0)
    if res["theta_row"] is not None:
        state.theta[0][0] = res["theta_row"]
    sampler._apply_eta(state, res, fits, total)
    sampler._record(state, res)
    return state


def update_thetak_block(sampler: GibbsSampler, state, k: int, index: int, rng_seed: int):
    """MH step on ``theta_k[index]`` followed by the paired draw of ``eta_k`` on its footprint."""
    w = sampler.data_weights(state)
    fits, total = sampler.fits(state)
    plan = sampler.theta_plans[k][index]
    res = sampler.theta_block(state, k, index, plan, w, total, rng_seed, TAG_THETAK)
    if res["theta_row"] is not None:
        state.theta[k][index] = res["theta_row"]
    sampler._apply_eta(state, res, fits, total)
    sampler._record(state, res)
    return state


def reupdate_etak_tiles(sampler: GibbsSampler, state, k: int, tiling: Tiling,
                        colouring: Colouring, rng_seed: int):
    """Colour-by-colour redraw of every tile of ``eta_k`` from its full conditional."""
    cache = sampler.__dict__.setdefault("_external_tiles", {})
    key = (k, id(tiling))
    if key not in cache:
        sc = sampler.spec.scales[k]
        rows = RowsProvider(sampler.spec)
        cache[key] = (tiling, [BlockPlan(sc.prior, rows, k, t, sampler.graphs[k])
                               for t in tiling.tiles])
    plans = cache[key][1]
    w = sampler.data_weights(state)
    fits, total = sampler.fits(state)
    for cls in colouring.classes():
        cls = [int(c) for c in cls]
        results = sampler._map(lambda t: sampler.tile_block(state, k, plans[t], t, w, total, rng_seed),
                               cls)
        for r in results:
            sampler._apply_eta(state, r, fits, total)
    return state


def update_theta_eps(sampler: GibbsSampler, state, rng_seed: int):
    """Colour-parallel MH steps on the measurement-error coefficients."""
    _, total = sampler.fits(state)
    resid = sampler.spec.z - total
    for cls in sampler.eps_classes:
        results = sampler._map(lambda i: sampler.eps_block(state, i, resid, rng_seed), cls)
        for r in results:
            state.theta_eps[r["i"]] = r["value"]
            sampler.proposals[r["name"]].record(r["accepted"])
    return state


def gibbs_sweep(sampler: GibbsSampler, state, rng_seed: int):
    """One full pass (steps 1-4); advances the tiling cycle position mod 3."""
    return sampler.sweep(state, rng_seed)


__all__ = ["collapsed_theta0_logdensity", "update_eta0_theta0", "update_thetak_block",
           "reupdate_etak_tiles", "update_theta_eps", "gibbs_sweep"]
