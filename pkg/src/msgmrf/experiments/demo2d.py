"""Desk-scale two-scale fit on the unit square.

A coarse stationary field plus a fine field whose standard deviation and
range vary smoothly in space are simulated from the model's own GMRFs,
observed with noise at scattered points that avoid a central box, and
then fitted with the full blocked Gibbs sampler. Predictions at held-out
points are scored separately near data, far from data and inside the box.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..mesh import build_grid_mesh, eval_basis_matrix, read_mesh, write_mesh
from ..params import prior_from_quantiles
from ..sampler.chain import SamplerConfig, predictive_draws, run_chain
from ..sampler.model import ModelSpec, ScaleSpec, SpdePrior, constant_param_basis, scale_precision
from ..scoring import PredictiveSummary, score_all, split_validation, write_score_table
from ..sparse import cholesky_factorize, draw_from_factor

UNIT = ((0.0, 1.0), (0.0, 1.0))


@dataclass
class DemoConfig:
    n_train: int = 3000
    n_val: int = 900
    n_box: int = 100
    box: tuple = ((0.4, 0.6), (0.4, 0.6))
    vicinity: float = 0.0125
    coarse_spacing: float = 1.0 / 19
    fine_spacing: float = 1.0 / 62
    param_spacing: float = 0.25
    sigma0: float = 1.0
    rho0: float = 0.5
    sigma1: float = 0.3
    sigma1_slope: float = 0.3      # log sigma1 changes by this much across y
    rho1: float = 0.08
    rho1_slope: float = 0.8        # log rho1 changes by this much across x
    sigma_eps: float = 0.05
    q_rho0: tuple = (0.1, 2.0)
    q_sigma0: tuple = (0.1, 5.0)
    q_rho1: tuple = (0.03, 0.3)
    q_sigma1: tuple = (0.05, 2.0)
    q_sigma_eps: tuple = (0.01, 0.5)
    tile_extent: float = 0.3
    min_data: int = 100
    min_basis: int = 200
    n_iterations: int = 2000
    burn_in: int = 800
    thin: int = 5
    seed: int = 1
    workers: int = 1
    fix_truth: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)


@dataclass
class DemoProblem:
    spec: ModelSpec
    theta_true: list
    theta_eps_true: np.ndarray
    x_train: np.ndarray
    x_val: np.ndarray
    z_val: np.ndarray
    y_val: np.ndarray
    val_bases: list
    val_eps_basis: sp.csr_matrix
    meshes: tuple = ()


def _uniform_outside(rng, n, box):
    b = np.asarray(box)
    out = np.empty((0, 2))
    while out.shape[0] < n:
        p = rng.uniform(0.0, 1.0, (2 * n, 2))
        inside = np.all((p >= b[:, 0]) & (p <= b[:, 1]), axis=1)
        out = np.vstack([out, p[~inside]])
    return out[:n]


def build_meshes(c: DemoConfig, extent=UNIT, scale: float = 1.0):
    """Coarse, fine and parameter meshes; spacings are multiplied by ``scale``."""
    return (build_grid_mesh(2, extent, c.coarse_spacing * scale),
            build_grid_mesh(2, extent, c.fine_spacing * scale),
            build_grid_mesh(2, extent, c.param_spacing * scale))


def build_spec(x, z, meshes, c: DemoConfig) -> ModelSpec:
    """Two-scale model for data ``z`` at ``x`` on the given meshes."""
    m0, m1, pm = meshes
    pr = {name: prior_from_quantiles(*getattr(c, f"q_{name}"))
          for name in ("rho0", "sigma0", "rho1", "sigma1", "sigma_eps")}
    p0, p1 = SpdePrior(m0), SpdePrior(m1)
    s0 = ScaleSpec(eval_basis_matrix(m0, x), p0, constant_param_basis(p0.n), pr["sigma0"],
                   pr["rho0"], mesh=m0, name="coarse")
    s1 = ScaleSpec(eval_basis_matrix(m1, x), p1, eval_basis_matrix(pm, m1.vertices),
                   pr["sigma1"], pr["rho1"], mesh=m1, tile_extent=c.tile_extent,
                   min_data=c.min_data, min_basis=c.min_basis, name="fine")
    return ModelSpec(z, [s0, s1], eval_basis_matrix(pm, x), pr["sigma_eps"],
                     eps_graph=pm.adjacency())


def build_problem(c: DemoConfig) -> DemoProblem:
    """Meshes, true parameters, simulated data and the model specification."""
    rng = np.random.default_rng([c.seed, 101])
    meshes = build_meshes(c)
    m0, m1, pm = meshes
    prior0, prior1 = SpdePrior(m0), SpdePrior(m1)
    b1 = eval_basis_matrix(pm, m1.vertices)

    pv = pm.vertices
    theta0 = np.array([[math.log(c.sigma0), math.log(c.rho0)]])
    theta1 = np.column_stack([math.log(c.sigma1) + c.sigma1_slope * (pv[:, 1] - 0.5),
                              math.log(c.rho1) + c.rho1_slope * (pv[:, 0] - 0.5)])
    theta_eps = np.full(pm.n_vertices, math.log(c.sigma_eps))

    etas = []
    for k, (prior, pb, th) in enumerate(((prior0, constant_param_basis(prior0.n), theta0),
                                         (prior1, b1, theta1))):
        tau, kappa = prior.fields(pb @ th[:, 0], pb @ th[:, 1])
        f = cholesky_factorize(prior.precision(tau, kappa))
        eta, _ = draw_from_factor(f, np.zeros(prior.n), np.random.default_rng([c.seed, 102, k]))
        etas.append(eta)

    x_train = _uniform_outside(rng, c.n_train, c.box)
    b = np.asarray(c.box)
    x_box = b[:, 0] + (b[:, 1] - b[:, 0]) * rng.uniform(size=(c.n_box, 2))
    x_val = np.vstack([_uniform_outside(rng, c.n_val, c.box), x_box])

    def field_at(x):
        bases = [eval_basis_matrix(m0, x), eval_basis_matrix(m1, x)]
        eb = eval_basis_matrix(pm, x)
        return bases, eb, bases[0] @ etas[0] + bases[1] @ etas[1]

    _, eb, y = field_at(x_train)
    z = y + np.exp(eb @ theta_eps) * rng.standard_normal(c.n_train)
    vb, veb, yv = field_at(x_val)
    zv = yv + np.exp(veb @ theta_eps) * rng.standard_normal(x_val.shape[0])
    spec = build_spec(x_train, z, meshes, c)
    return DemoProblem(spec, [theta0, theta1], theta_eps, x_train, x_val, zv, yv, vb, veb, meshes)


def dense_kriging(problem: DemoProblem, idx) -> PredictiveSummary:
    """Conjugate predictions at ``x_val[idx]`` with the true parameters, in data space."""
    spec = problem.spec
    sd = np.exp(spec.eps_basis @ problem.theta_eps_true)
    sdv = np.exp(problem.val_eps_basis[idx] @ problem.theta_eps_true)
    czz = np.diag(sd * sd)
    cvz = np.zeros((len(idx), spec.n_data))
    cvv = np.zeros(len(idx))
    for k, sc in enumerate(spec.scales):
        cov = np.linalg.inv(scale_precision(sc, problem.theta_true[k]).toarray())
        a = sc.basis.toarray()
        av = problem.val_bases[k][idx].toarray()
        czz += a @ cov @ a.T
        cvz += av @ cov @ a.T
        cvv += np.einsum("ij,jk,ik->i", av, cov, av)
    chol = np.linalg.cholesky(czz)
    w = np.linalg.solve(chol, cvz.T)
    mean = w.T @ np.linalg.solve(chol, spec.z)
    var = cvv - np.sum(w * w, axis=0) + sdv * sdv
    return PredictiveSummary(mean, np.sqrt(var))


def fit_2d_demo(config: DemoConfig | None = None, out_dir=None, problem=None) -> dict:
    """Simulate, fit, predict and score.

    Returns a dict with the ``ChainOutput`` under ``"chain"``, the
    predictive summary at all validation points under ``"prediction"``, and
    a score dict per split (``"all"``, ``"near"``, ``"far"``, ``"box"``).
    """
    c = config or DemoConfig()
    prob = problem or build_problem(c)
    sampler = c.sampler
    if sampler.adapt_until > c.burn_in:
        # keep the retained draws from a fixed (non-adapting) kernel
        sampler = SamplerConfig(**{**sampler.__dict__, "adapt_until": c.burn_in})
    theta_init = theta_eps_init = None
    if c.fix_truth:
        sampler = SamplerConfig(**{**sampler.__dict__, "fixed": frozenset({"all"})})
        theta_init, theta_eps_init = prob.theta_true, prob.theta_eps_true
    out = run_chain(prob.spec, c.n_iterations, c.burn_in, c.thin, c.seed, c.workers, sampler,
                    theta_init=theta_init, theta_eps_init=theta_eps_init)
    means, noise = predictive_draws(out, prob.val_bases, prob.val_eps_basis)
    pred = PredictiveSummary.from_samples(means, noise)
    split = split_validation(prob.x_train, prob.x_val, c.box, c.vicinity)
    scores = {"all": score_all(pred, prob.z_val)}
    for name, idx in (("near", split.near_data), ("far", split.far_data),
                      ("box", split.held_out_box)):
        if idx.size:
            scores[name] = score_all(pred.subset(idx), prob.z_val[idx])
    out.config_echo.update({f"demo.{k}": v for k, v in c.__dict__.items() if k != "sampler"})
    if out_dir is not None:
        d = Path(out_dir)
        out.write(d, groups={"theta0", "theta1", "theta_eps"})
        save_posterior(d, prob.meshes, out)
        (d / "scores").mkdir(parents=True, exist_ok=True)
        write_score_table(d / "scores" / "demo2d.csv",
                          [{"dataset": name, "model": "two-scale", **s} for name, s in scores.items()])
        write_predictions(d / "scores" / "demo2d_predictions.csv", pred)
    return {"chain": out, "prediction": pred, "scores": scores, "split": split, "problem": prob}


def kriging_check(config: DemoConfig | None = None, n_points: int = 200) -> dict:
    """Fixed-truth sampler predictions against dense kriging on a validation subsample."""
    c = config or DemoConfig()
    c = DemoConfig(**{**c.__dict__, "fix_truth": True})
    prob = build_problem(c)
    res = fit_2d_demo(c, problem=prob)
    idx = np.sort(np.random.default_rng([c.seed, 103]).choice(prob.x_val.shape[0], n_points,
                                                             replace=False))
    oracle = dense_kriging(prob, idx)
    sampled = res["prediction"].subset(idx)
    z = prob.z_val[idx]
    return {"rmspe_sampler": score_all(sampled, z)["RMSPE"],
            "rmspe_kriging": score_all(oracle, z)["RMSPE"],
            "max_mean_diff": float(np.max(np.abs(sampled.mean - oracle.mean))),
            "chain": res["chain"]}


MESH_FILES = ("mesh_coarse.txt", "mesh_fine.txt", "mesh_param.txt")


def save_posterior(out_dir, meshes, chain, trend=None) -> None:
    """Meshes and posterior draws needed to predict at new locations later."""
    d = Path(out_dir) / "model"
    d.mkdir(parents=True, exist_ok=True)
    for mesh, name in zip(meshes, MESH_FILES):
        write_mesh(mesh, d / name)
    s = chain.samples
    np.savez_compressed(d / "posterior.npz", eta0=s["eta0"], eta1=s["eta1"],
                        theta_eps=s["theta_eps"],
                        trend=np.zeros(3) if trend is None else np.asarray(trend, dtype=float))


def predict_from_saved(model_dir, locations) -> PredictiveSummary:
    """Predictive mean and spread at ``locations`` from a saved posterior.

    ``model_dir`` is either a fit output directory or its ``model`` subdirectory.
    """
    d = Path(model_dir)
    if (d / "model").is_dir():
        d = d / "model"
    meshes = [read_mesh(d / name) for name in MESH_FILES]
    post = np.load(d / "posterior.npz")
    x = np.asarray(locations, dtype=float)
    means = ((eval_basis_matrix(meshes[0], x) @ post["eta0"].T)
             + (eval_basis_matrix(meshes[1], x) @ post["eta1"].T)).T
    noise = np.exp(2.0 * (eval_basis_matrix(meshes[2], x) @ post["theta_eps"].T).T)
    a, b, q = post["trend"]
    yc = x[:, -1]
    return PredictiveSummary.from_samples(means + (a + b * yc + q * yc * yc), noise)


def write_predictions(path, pred: PredictiveSummary) -> None:
    """``location_id, mean, std`` rows, readable by ``read_external_predictions``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location_id", "mean", "std"])
        for i, (m, s) in enumerate(zip(pred.mean, pred.std)):
            w.writerow([i, repr(float(m)), repr(float(s))])
