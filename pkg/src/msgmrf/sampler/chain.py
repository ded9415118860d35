"""The colour-parallel blocked Gibbs sampler and chain driver."""

from __future__ import annotations

import csv
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr

from ..colouring import (DependencyGraph, backtracking_colour, build_param_dependency_graph,
                         colour_with_fallback, tile_supergraph_colour)
from ..errors import ColouringInfeasible, ConfigError, NotPositiveDefinite, SamplerFailure
from ..params import log_prior_density
from ..sparse import CanonicalGaussian, SparseSymmetric
from .blocks import AdaptiveProposal, BlockPlan, FootprintSpec, RowsProvider, minimal_footprint
from .model import ModelSpec, ModelState, default_tilings, eps_std, scale_fields

TAG_INIT, TAG_THETA0, TAG_THETAK, TAG_TILE, TAG_EPS = 0, 1, 2, 3, 4
_BLOCK_STRIDE = 1_000_000


def derive_rng(seed: int, iteration: int, tag: int, block: int) -> np.random.Generator:
    """Independent stream per (chain seed, iteration, module tag, block id)."""
    return np.random.default_rng([int(seed), int(iteration), int(tag), int(block)])


@dataclass
class SamplerConfig:
    """Tunables of the sampler.

    ``fixed`` names parameter groups held at their initial values:
    ``"theta0"``, ``"theta1"``, ``"theta1_sigma"``, ``"theta1_rho"``,
    ``"theta_eps"`` or ``"all"``. Fixed groups skip the Metropolis step but
    the paired process draws still happen.
    """

    adapt_every: int = 30
    adapt_until: int = 2000
    target_block: float = 0.25
    target_scalar: float = 0.44
    initial_step: float = 0.001
    fixed: frozenset = frozenset()
    eta0_init_var: float = 0.04
    etak_init_var: float = 0.01
    max_colours: int = 4
    check_colour_safety: bool = True

    def __post_init__(self):
        self.fixed = frozenset(self.fixed)
        if self.adapt_every < 1 or self.initial_step <= 0:
            raise ConfigError("adapt_every must be >= 1 and initial_step > 0")

    def fixed_mask(self, k: int) -> np.ndarray:
        """Which of (sigma, rho) are fixed at scale ``k``."""
        if "all" in self.fixed or f"theta{k}" in self.fixed:
            return np.array([True, True])
        return np.array([f"theta{k}_sigma" in self.fixed, f"theta{k}_rho" in self.fixed])

    @property
    def eps_fixed(self) -> bool:
        return "all" in self.fixed or "theta_eps" in self.fixed


def _check_class(blocks_sets):
    """Count write/read overlaps between distinct blocks of one colour class.

    ``blocks_sets`` is a list of ``(writes, reads)`` where each is a dict
    ``category -> index array``.
    """
    conflicts = 0
    cats = set()
    for w, r in blocks_sets:
        cats |= set(w) | set(r)
    for cat in cats:
        owner = {}
        for b, (w, _) in enumerate(blocks_sets):
            for i in np.asarray(w.get(cat, []), dtype=np.int64).tolist():
                if owner.setdefault(i, b) != b:
                    conflicts += 1
        for b, (_, r) in enumerate(blocks_sets):
            for i in np.asarray(r.get(cat, []), dtype=np.int64).tolist():
                o = owner.get(i, b)
                if o != b:
                    conflicts += 1
    return conflicts


class GibbsSampler:
    """Precomputed plans and colourings for one model, plus the update steps."""

    def __init__(self, spec: ModelSpec, config: SamplerConfig | None = None, worker_count: int = 1):
        self.spec = spec
        self.config = config or SamplerConfig()
        self.worker_count = max(1, int(worker_count))
        self._pool = ThreadPoolExecutor(self.worker_count) if self.worker_count > 1 else None
        rows = RowsProvider(spec)
        cfg = self.config
        self.graphs = [s.prior.graph() for s in spec.scales]
        self.colour_conflicts = 0

        # scale 0: one block over the whole process
        s0 = spec.scales[0]
        self.plan0 = BlockPlan(s0.prior, rows, 0, np.arange(s0.n_eta), self.graphs[0])
        self.proposals = {}
        if s0.n_theta:
            self.proposals["theta0"] = self._new_proposal(cfg.target_block)

        # fine scales: parameter blocks and tiles
        self.theta_plans = {}
        self.theta_classes = {}
        self.footprints = {}
        self.tilings = {}
        self.tile_plans = {}
        self.tile_classes = {}
        m = spec.n_data
        for k in range(1, spec.n_scales):
            sc = spec.scales[k]
            g = self.graphs[k]
            if sc.n_theta:
                b = sp.csc_matrix(sc.param_basis)
                plans, fps = [], []
                for i in range(sc.n_theta):
                    t = minimal_footprint(b[:, i].toarray().ravel(), g, sc.footprint_rings)
                    plan = BlockPlan(sc.prior, rows, k, t, g)
                    plans.append(plan)
                    fps.append(FootprintSpec(plan.T, plan.F))
                    self.proposals[f"theta{k}[{i}]"] = self._new_proposal(cfg.target_block)
                dep = build_param_dependency_graph(g, [p.T for p in plans], [p.F for p in plans],
                                                   param_influence=sc.param_basis, n_data=m)
                col = colour_with_fallback(dep, cfg.max_colours)
                self.theta_plans[k] = plans
                self.footprints[k] = fps
                self.theta_classes[k] = [list(c) for c in col.classes()]
                if cfg.check_colour_safety:
                    infl = sp.csr_matrix(sc.param_basis)
                    for cls in self.theta_classes[k]:
                        sets = []
                        for i in cls:
                            p = plans[i]
                            rd = p.reads()
                            touched = np.unique(infl[rd].indices) if rd.size else np.zeros(0, int)
                            sets.append(({"eta": p.T, "theta": np.array([i]), "data": p.F},
                                         {"eta": rd, "theta": touched, "data": p.F}))
                        self.colour_conflicts += _check_class(sets)
            counts = np.bincount(np.asarray(sc.basis.argmax(axis=1)).ravel(),
                                 minlength=sc.n_eta) if m else np.zeros(sc.n_eta)
            tilings = default_tilings(sc, data_counts=counts)
            self.tilings[k] = tilings
            self.tile_plans[k] = []
            self.tile_classes[k] = []
            for tiling in tilings:
                plans = [BlockPlan(sc.prior, rows, k, t, g) for t in tiling.tiles]
                try:
                    col = tile_supergraph_colour(tiling, g, cfg.max_colours)
                except ColouringInfeasible:
                    from ..colouring import tile_adjacency
                    col = colour_with_fallback(tile_adjacency(tiling, g), cfg.max_colours + 1)
                classes = [list(c) for c in col.classes()]
                self.tile_plans[k].append(plans)
                self.tile_classes[k].append(classes)
                if cfg.check_colour_safety:
                    for cls in classes:
                        sets = [({"eta": plans[i].T, "data": plans[i].F},
                                 {"eta": plans[i].reads(), "data": plans[i].F}) for i in cls]
                        self.colour_conflicts += _check_class(sets)

        # measurement-error coefficients
        be = sp.csc_matrix(spec.eps_basis)
        self.eps_F = [np.unique(be[:, i].nonzero()[0]).astype(np.int64) for i in range(spec.n_eps)]
        self.eps_rows = [spec.chunks.eps_rows(f) for f in self.eps_F]
        share = (be.T @ be).tocsr()
        if spec.eps_graph is not None:
            share = share + sp.csr_matrix(spec.eps_graph)
        dep = DependencyGraph.from_adjacency(share)
        col = colour_with_fallback(dep, cfg.max_colours)
        self.eps_classes = [list(c) for c in col.classes()]
        for i in range(spec.n_eps):
            self.proposals[f"theta_eps[{i}]"] = self._new_proposal(cfg.target_scalar)
        self.acceptance_log = []

    def _new_proposal(self, target):
        c = self.config
        return AdaptiveProposal(c.initial_step, c.adapt_every, c.adapt_until, target)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _map(self, fn, items):
        if self._pool is None or len(items) < 2:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    # -- shared pieces --------------------------------------------------
    def data_weights(self, state: ModelState) -> np.ndarray:
        return np.exp(-2.0 * (self.spec.eps_basis @ state.theta_eps))

    def fits(self, state: ModelState):
        f = [s.basis @ e for s, e in zip(self.spec.scales, state.eta)]
        total = np.zeros(self.spec.n_data)
        for fk in f:
            total = total + fk
        return f, total

    def _log_prior_row(self, k, row):
        sc = self.spec.scales[k]
        return log_prior_density(sc.prior_sigma, row[0]) + log_prior_density(sc.prior_rho, row[1])

    # -- block updates --------------------------------------------------
    def theta_block(self, state, k, i, plan, w, fit_total, seed, tag):
        """MH step on ``theta_k[i]`` from the collapsed density, then the paired eta draw."""
        sc = self.spec.scales[k]
        prior = sc.prior
        name = "theta0" if k == 0 else f"theta{k}[{i}]"
        theta_k = state.theta[k]
        mask = ~self.config.fixed_mask(k) if sc.n_theta else np.array([False, False])
        rng = derive_rng(seed, state.iteration, tag, k * _BLOCK_STRIDE + i)
        eta_k = state.eta[k]
        out = {"k": k, "i": i, "plan": plan, "name": name, "proposed": False,
               "accepted": False, "theta_row": None, "eta_T": None}
        has_t = plan.nT > 0
        if mask.any():
            prop = self.proposals[name]
            try:
                if has_t:
                    ld_cur, f_cur, b_cur = plan.evaluate(prior, *scale_fields(sc, theta_k), eta_k, w,
                                                         fit_total)
                else:
                    ld_cur, f_cur, b_cur = 0.0, None, None
            except NotPositiveDefinite as exc:
                raise SamplerFailure(f"current state not factorizable in block {name}",
                                     dump=self._dump(state, name)) from exc
            lp_cur = self._log_prior_row(k, theta_k[i])
            cand = theta_k.copy()
            cand[i, mask] += math.sqrt(prop.step_variance) * rng.standard_normal(int(mask.sum()))
            out["proposed"] = True
            accepted = False
            try:
                if has_t:
                    ld_new, f_new, b_new = plan.evaluate(prior, *scale_fields(sc, cand), eta_k, w,
                                                         fit_total)
                else:
                    ld_new, f_new, b_new = 0.0, None, None
                log_alpha = ld_new + self._log_prior_row(k, cand[i]) - ld_cur - lp_cur
                accepted = bool(math.log(rng.uniform()) < log_alpha)
            except NotPositiveDefinite:
                accepted = False
                rng.uniform()
            out["accepted"] = accepted
            if accepted:
                out["theta_row"] = cand[i].copy()
                factor, shift = f_new, b_new
            else:
                factor, shift = f_cur, b_cur
        else:
            if has_t:
                _, factor, shift = plan.evaluate(prior, *scale_fields(sc, theta_k), eta_k, w,
                                                 fit_total, with_density=False)
        if has_t:
            out["eta_T"] = plan.draw(factor, shift, rng)
        return out

    def tile_block(self, state, k, plan, tile_id, w, fit_total, seed):
        sc = self.spec.scales[k]
        rng = derive_rng(seed, state.iteration, TAG_TILE, k * _BLOCK_STRIDE + tile_id)
        _, factor, shift = plan.evaluate(sc.prior, *scale_fields(sc, state.theta[k]), state.eta[k],
                                         w, fit_total, with_density=False)
        return {"k": k, "plan": plan, "eta_T": plan.draw(factor, shift, rng)}

    def eps_block(self, state, i, resid, seed):
        name = f"theta_eps[{i}]"
        rng = derive_rng(seed, state.iteration, TAG_EPS, i)
        prop = self.proposals[name]
        f = self.eps_F[i]
        b = self.eps_rows[i]
        r2 = resid[f] ** 2
        prior = self.spec.eps_prior

        def loglik(th):
            ls = b @ th
            return float(np.sum(-ls - 0.5 * r2 * np.exp(-2.0 * ls)))

        th = state.theta_eps
        cand = th.copy()
        cand[i] += math.sqrt(prop.step_variance) * rng.standard_normal()
        log_alpha = (loglik(cand) + log_prior_density(prior, cand[i])
                     - loglik(th) - log_prior_density(prior, th[i]))
        accepted = bool(math.log(rng.uniform()) < log_alpha)
        return {"i": i, "name": name, "accepted": accepted, "value": cand[i] if accepted else th[i]}

    def _dump(self, state, block):
        return {"iteration": state.iteration, "block": block,
                "theta": [t.tolist() for t in state.theta], "theta_eps": state.theta_eps.tolist()}

    def _apply_eta(self, state, res, fits, fit_total):
        plan = res["plan"]
        new = res["eta_T"]
        if new is None:
            return
        k = res["k"]
        old = state.eta[k][plan.T]
        state.eta[k][plan.T] = new
        if plan.F.size:
            delta = plan.A @ (new - old)
            fits[k][plan.F] += delta
            fit_total[plan.F] += delta

    def _record(self, state, res):
        if not res["proposed"]:
            return
        prop = self.proposals[res["name"]]
        prop.record(res["accepted"])
        self.acceptance_log.append((state.iteration, res["name"], res["accepted"]))
        state.counters["theta_proposals"] += 1
        if res.get("eta_T") is not None:
            state.counters["eta_star_draws"] += 1
            if not res["accepted"]:
                state.counters["eta_star_on_reject"] += 1

    # -- the sweep ------------------------------------------------------
    def sweep(self, state: ModelState, seed: int) -> ModelState:
        """One pass of steps 1-4 of the parallel Gibbs sampler (in place)."""
        spec = self.spec
        w = self.data_weights(state)
        fits, fit_total = self.fits(state)

        # step 1: joint (eta0, theta0)
        res = self.theta_block(state, 0, 0, self.plan0, w, fit_total, seed, TAG_THETA0)
        if res["theta_row"] is not None:
            state.theta[0][0] = res["theta_row"]
        self._apply_eta(state, res, fits, fit_total)
        self._record(state, res)

        # step 2: for each fine scale, (eta*, theta_k) then tile re-updates
        pos = state.tiling_position
        for k in range(1, spec.n_scales):
            for cls in self.theta_classes.get(k, []):
                plans = self.theta_plans[k]
                results = self._map(
                    lambda i: self.theta_block(state, k, i, plans[i], w, fit_total, seed, TAG_THETAK),
                    cls)
                for r in results:
                    if r["theta_row"] is not None:
                        state.theta[k][r["i"]] = r["theta_row"]
                    self._apply_eta(state, r, fits, fit_total)
                    self._record(state, r)
            plans = self.tile_plans[k][pos]
            for cls in self.tile_classes[k][pos]:
                results = self._map(
                    lambda t: self.tile_block(state, k, plans[t], t, w, fit_total, seed), cls)
                for r in results:
                    self._apply_eta(state, r, fits, fit_total)
                state.counters["tile_draws"] += len(cls)

        # step 3: measurement-error coefficients
        if spec.n_eps and not self.config.eps_fixed:
            resid = spec.z - fit_total
            for cls in self.eps_classes:
                results = self._map(lambda i: self.eps_block(state, i, resid, seed), cls)
                for r in results:
                    state.theta_eps[r["i"]] = r["value"]
                    self.proposals[r["name"]].record(r["accepted"])
                    self.acceptance_log.append((state.iteration, r["name"], r["accepted"]))

        # step 4: advance tiling and adapt
        state.iteration += 1
        state.tiling_position = (pos + 1) % 3
        for p in self.proposals.values():
            p.maybe_adapt(state.iteration)
        return state

    # -- single-step public helpers ---------------------------------------
    def collapsed_theta0_logdensity(self, state, theta0):
        """Collapsed log density of ``theta0`` (plus its log prior) and the eta0 conditional.

        A parameter-free scale-0 prior ignores ``theta0``.
        """
        sc = self.spec.scales[0]
        th = state.theta[0].copy()
        if sc.n_theta:
            th[0] = np.asarray(theta0, dtype=float)
        w = self.data_weights(state)
        _, fit_total = self.fits(state)
        ld, factor, shift = self.plan0.evaluate(sc.prior, *scale_fields(sc, th), state.eta[0],
                                                w, fit_total)
        if sc.n_theta:
            ld += self._log_prior_row(0, th[0])
        prec = _factor_precision(self.plan0, factor)
        return ld, CanonicalGaussian(prec, shift)

    def thetak_block_logdensity(self, state, k, i, theta_row):
        """Footprint-approximated collapsed log density of ``theta_k[i]`` (plus log prior)."""
        sc = self.spec.scales[k]
        th = state.theta[k].copy()
        th[i] = np.asarray(theta_row, dtype=float)
        plan = self.theta_plans[k][i]
        w = self.data_weights(state)
        _, fit_total = self.fits(state)
        lp = self._log_prior_row(k, th[i])
        if plan.nT == 0:
            return lp
        ld, _, _ = plan.evaluate(sc.prior, *scale_fields(sc, th), state.eta[k], w, fit_total)
        return ld + lp


def _factor_precision(plan, factor) -> SparseSymmetric:
    """Rebuild the conditional precision from a factor (for the canonical form)."""
    low = factor.lower_factor
    p = factor.permutation
    full = (low @ low.T).tocsr()
    pinv = np.empty_like(p)
    pinv[p] = np.arange(p.size)
    return SparseSymmetric(full[pinv][:, pinv])


def initial_state(spec: ModelSpec, config: SamplerConfig, seed: int, theta_init=None,
                  theta_eps_init=None, eta_init=None) -> ModelState:
    """Starting values: parameters from their priors, eta0 from perturbed least squares.

    ``theta_init`` may give a ``(r_theta_k, 2)`` array per scale (or ``None``
    entries); it is required for fixed groups.
    """
    rng = derive_rng(seed, 0, TAG_INIT, 0)
    thetas = []
    for k, sc in enumerate(spec.scales):
        given = None if theta_init is None else theta_init[k]
        p = sc.n_theta
        if p == 0:
            thetas.append(np.zeros((0, 2)))
            continue
        draw = np.column_stack([sc.prior_sigma.sample(rng, p), sc.prior_rho.sample(rng, p)])
        mask = config.fixed_mask(k)
        if given is not None:
            draw = np.array(given, dtype=float).reshape(p, 2)
        elif mask.any():
            raise ConfigError(f"fixed parameters at scale {k} need initial values")
        thetas.append(draw)
    if theta_eps_init is not None:
        theta_eps = np.array(theta_eps_init, dtype=float).reshape(spec.n_eps)
    elif config.eps_fixed:
        raise ConfigError("fixed measurement-error parameters need initial values")
    else:
        theta_eps = spec.eps_prior.sample(rng, spec.n_eps)
    if eta_init is not None:
        eta = [np.array(e, dtype=float) for e in eta_init]
    else:
        a0 = spec.scales[0].basis
        ls = lsqr(a0, spec.z, atol=1e-10, btol=1e-10, iter_lim=10 * a0.shape[1])[0] \
            if spec.n_data else np.zeros(a0.shape[1])
        eta = [ls + math.sqrt(config.eta0_init_var) * rng.standard_normal(a0.shape[1])]
        for sc in spec.scales[1:]:
            eta.append(math.sqrt(config.etak_init_var) * rng.standard_normal(sc.n_eta))
    return ModelState(eta, thetas, theta_eps)


@dataclass
class ChainOutput:
    """Thinned post-burn-in samples, acceptance log and the resolved configuration."""

    samples: dict
    iterations: np.ndarray
    acceptance_log: list
    acceptance_rates: dict
    config_echo: dict
    final_state: ModelState
    counters: dict = field(default_factory=dict)

    def write(self, out_dir, groups=None) -> None:
        """CSV per quantity group (iteration, index, value), acceptance log, config echo."""
        out = Path(out_dir)
        (out / "samples").mkdir(parents=True, exist_ok=True)
        for name, arr in self.samples.items():
            if groups is not None and name not in groups:
                continue
            flat = arr.reshape(arr.shape[0], -1)
            with open(out / "samples" / f"{name}.csv", "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["iteration", "index", "value"])
                for it, row in zip(self.iterations, flat):
                    for j, v in enumerate(row):
                        wr.writerow([int(it), j, repr(float(v))])
        with open(out / "acceptance.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "block", "accepted"])
            for it, name, acc in self.acceptance_log:
                wr.writerow([it, name, int(acc)])
        write_config_echo(out / "chain_echo.txt", self.config_echo)


def write_config_echo(path, echo: dict) -> None:
    lines = [f"{k} = {v}" for k, v in sorted(echo.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def run_chain(spec: ModelSpec, n_iterations: int, burn_in: int, thin: int, rng_seed: int,
              worker_count: int = 1, config: SamplerConfig | None = None, theta_init=None,
              theta_eps_init=None, eta_init=None, keep=None) -> ChainOutput:
    """Run the sampler and keep every ``thin``-th post-burn-in sweep.

    Post-burn-in sweep ``j`` (1-based) is retained when ``j % thin == 0``.
    ``keep`` optionally restricts which sample groups are stored.
    """
    if not 0 <= burn_in < n_iterations:
        raise ConfigError("need 0 <= burn_in < n_iterations")
    if thin < 1:
        raise ConfigError("thin must be >= 1")
    config = config or SamplerConfig()
    sampler = GibbsSampler(spec, config, worker_count)
    state = initial_state(spec, config, rng_seed, theta_init, theta_eps_init, eta_init)
    store = {}
    iters = []

    def grab(name, value):
        if keep is None or name in keep:
            store.setdefault(name, []).append(np.array(value, copy=True))

    try:
        for it in range(n_iterations):
            sampler.sweep(state, rng_seed)
            j = it + 1 - burn_in
            if j >= 1 and j % thin == 0:
                iters.append(it + 1)
                for k in range(spec.n_scales):
                    grab(f"eta{k}", state.eta[k])
                    if spec.scales[k].n_theta:
                        grab(f"theta{k}", state.theta[k])
                grab("theta_eps", state.theta_eps)
    finally:
        sampler.close()
    samples = {k: np.stack(v) for k, v in store.items()}
    rates = {k: p.acceptance_rate for k, p in sampler.proposals.items()}
    echo = {"n_iterations": n_iterations, "burn_in": burn_in, "thin": thin, "seed": rng_seed,
            "worker_count": worker_count, "n_scales": spec.n_scales, "n_data": spec.n_data}
    echo.update({f"sampler.{k}": (sorted(v) if isinstance(v, frozenset) else v)
                 for k, v in asdict(config).items()})
    return ChainOutput(samples, np.asarray(iters, dtype=np.int64), sampler.acceptance_log, rates,
                       echo, state, dict(state.counters))


def predictive_draws(output: ChainOutput, bases, eps_basis):
    """Per-sample predictive means and noise variances at new locations.

    ``bases[k]`` evaluates scale ``k`` at the prediction points; returns
    ``(means, noise_var)``, both ``(n_samples, n_points)``.
    """
    s = output.samples
    means = None
    for k, b in enumerate(bases):
        contrib = (sp.csr_matrix(b) @ s[f"eta{k}"].T).T
        means = contrib if means is None else means + contrib
    noise = np.exp(2.0 * (sp.csr_matrix(eps_basis) @ s["theta_eps"].T).T)
    return means, noise
