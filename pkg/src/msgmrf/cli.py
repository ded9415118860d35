"""Command-line entry point: ``msgmrf <mode> --config <path> [--seed N] [--workers N] [--out DIR]``.

Modes
-----
simulate-b   fixed versus alternating tilings on an AR(1) chain
simulate-c   two-scale 1D discretisation study
fit          two-scale fit of a CSV data set, or of a simulated field
predict      predictions at new locations from a saved fit
score        score predictions against validation data
colour       tilings and parameter colourings of a model, as CSV

Every run writes ``config_echo.txt`` with all resolved keys (defaults
included) under ``--out``; feeding it back as ``--config`` repeats the run.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import ChainTrace, write_ess_report
from .errors import ConfigError, MsgmrfError
from .experiments.appendix_b import AppendixBConfig, run_appendix_b
from .experiments.appendix_c import AppendixCConfig, run_appendix_c, trends_hold
from .experiments.demo2d import (DemoConfig, build_meshes, build_spec, fit_2d_demo,
                                 predict_from_saved, save_posterior, write_predictions)
from .io import RunConfig, detrend, read_points_csv, write_config
from .sampler.chain import GibbsSampler, SamplerConfig, run_chain
from .scoring import read_external_predictions, score_all, split_validation, write_score_table

log = logging.getLogger("msgmrf")

MODES = ("simulate-b", "simulate-c", "fit", "predict", "score", "colour")


def _sampler_config(cfg: RunConfig) -> SamplerConfig:
    d = SamplerConfig()
    fixed = cfg.get_str("fixed", "")
    return SamplerConfig(
        adapt_every=cfg.get_int("adapt_every", d.adapt_every),
        adapt_until=cfg.get_int("adapt_until", d.adapt_until),
        target_block=cfg.get_float("target_block", d.target_block),
        target_scalar=cfg.get_float("target_scalar", d.target_scalar),
        initial_step=cfg.get_float("initial_step", d.initial_step),
        fixed=frozenset(fixed.replace(",", " ").split()),
        max_colours=cfg.get_int("max_colours", d.max_colours),
    )


def _demo_config(cfg: RunConfig, seed, workers) -> DemoConfig:
    d = DemoConfig()
    kw = {}
    for name, val in d.__dict__.items():
        if name in ("seed", "workers", "sampler"):
            continue
        if isinstance(val, bool):
            kw[name] = cfg.get_bool(name, val)
        elif isinstance(val, int):
            kw[name] = cfg.get_int(name, val)
        elif isinstance(val, float):
            kw[name] = cfg.get_float(name, val)
        elif name == "box":
            v = cfg.get_floats(name, [x for pair in val for x in pair])
            kw[name] = ((v[0], v[1]), (v[2], v[3]))
        else:
            kw[name] = tuple(cfg.get_floats(name, list(val)))
    return DemoConfig(seed=seed, workers=workers, sampler=_sampler_config(cfg), **kw)


def _run_b(cfg, seed, workers, out):
    d = AppendixBConfig()
    c = AppendixBConfig(
        n=cfg.get_int("n", d.n), phi=cfg.get_float("phi", d.phi),
        sigma_v_sq=cfg.get_float("sigma_v_sq", d.sigma_v_sq),
        n_iterations=cfg.get_int("n_iterations", d.n_iterations),
        keep_last=cfg.get_int("keep_last", d.keep_last), thin=cfg.get_int("thin", d.thin),
        monitor=cfg.get_int("monitor", d.monitor), max_lag=cfg.get_int("max_lag", d.max_lag),
        seed=seed)
    r = run_appendix_b(c, out)
    with open(out / "diagnostics" / "appendix_b_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sampler", "acf1", "max_abs_acf_1_to_max_lag", "variance", "dense_variance"])
        for name in ("sampler1", "sampler2"):
            acf = r[f"{name}_acf"]
            w.writerow([name, f"{acf[1]:.6g}", f"{np.max(np.abs(acf[1:])):.6g}",
                        f"{r[name + '_var']:.6g}", f"{r['var_true']:.6g}"])
    log.info("sampler 1 ACF(1) = %.3f, sampler 2 max |ACF| = %.3f",
             r["sampler1_acf"][1], np.max(np.abs(r["sampler2_acf"][1:])))


def _run_c(cfg, seed, workers, out):
    d = AppendixCConfig()
    c = AppendixCConfig(
        tau=tuple(cfg.get_floats("tau", list(d.tau))),
        sigma_sq=tuple(cfg.get_floats("sigma_sq", list(d.sigma_sq))),
        noise_var=cfg.get_float("noise_var", d.noise_var),
        gap_length=cfg.get_float("gap_length", d.gap_length),
        n_outside=cfg.get_int("n_outside", d.n_outside),
        n_train=cfg.get_int("n_train", d.n_train), n_gap=cfg.get_int("n_gap", d.n_gap),
        n_replicates=cfg.get_int("n_replicates", d.n_replicates),
        delta0=tuple(cfg.get_floats("delta0", list(d.delta0))),
        delta1=tuple(cfg.get_floats("delta1", list(d.delta1))),
        seed=seed, workers=workers)
    c.pairs()
    r = run_appendix_c(c, out)
    dense, gap = trends_hold(r, c)
    log.info("oracle %s; trends dense=%s gap=%s", r["oracle"], dense, gap)


def _fit_data(cfg, seed, workers, out):
    data = read_points_csv(cfg.require("data"))
    if data.locations.shape[1] != 2:
        raise ConfigError("fit expects 2D data (columns x, y, value)")
    trend = None
    if cfg.get_bool("detrend", False):
        data, trend = detrend(data)
    c = _demo_config(cfg, seed, workers)
    lo, hi = data.locations.min(axis=0), data.locations.max(axis=0)
    pad = cfg.get_float("pad", 0.02) * float(np.max(hi - lo))
    extent = tuple((float(a - pad), float(b + pad)) for a, b in zip(lo, hi))
    span = max(b - a for a, b in extent)
    meshes = build_meshes(c, extent, span)
    spec = build_spec(data.locations, data.values, meshes, c)
    sampler = c.sampler
    if sampler.adapt_until > c.burn_in:
        sampler = SamplerConfig(**{**sampler.__dict__, "adapt_until": c.burn_in})
    chain = run_chain(spec, c.n_iterations, c.burn_in, c.thin, seed, workers, sampler)
    chain.write(out, groups={"theta0", "theta1", "theta_eps"})
    save_posterior(out, meshes, chain, trend)
    return chain


def _run_fit(cfg, seed, workers, out):
    if "data" in cfg.values:
        chain = _fit_data(cfg, seed, workers, out)
    else:
        res = fit_2d_demo(_demo_config(cfg, seed, workers), out)
        chain = res["chain"]
        for name, s in res["scores"].items():
            log.info("%s: %s", name, {k: round(v, 4) for k, v in s.items()})
    traces = []
    for name in ("theta0", "theta1", "theta_eps"):
        arr = chain.samples.get(name)
        if arr is None or arr.shape[0] < 4:
            continue
        flat = arr.reshape(arr.shape[0], -1)
        for j in range(flat.shape[1]):
            if np.ptp(flat[:, j]) > 0:
                traces.append(ChainTrace(flat[:, j], f"{name}[{j}]"))
    (out / "diagnostics").mkdir(parents=True, exist_ok=True)
    write_ess_report(out / "diagnostics" / "ess.csv", traces)
    with open(out / "diagnostics" / "acceptance_rates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "rate"])
        for k, v in chain.acceptance_rates.items():
            w.writerow([k, f"{v:.6g}"])


def _run_predict(cfg, seed, workers, out):
    pts = read_points_csv(cfg.require("locations"))
    pred = predict_from_saved(cfg.require("model_dir"), pts.locations)
    (out / "scores").mkdir(parents=True, exist_ok=True)
    write_predictions(out / "scores" / "predictions.csv", pred)


def _run_score(cfg, seed, workers, out):
    ids, pred = read_external_predictions(cfg.require("predictions"))
    val = read_points_csv(cfg.require("validation"))
    truth = val.values[ids]
    locs = val.locations[ids]
    model = cfg.get_str("model", "model")
    rows = [{"dataset": "all", "model": model, **score_all(pred, truth)}]
    if "train" in cfg.values:
        train = read_points_csv(cfg.get_str("train"))
        box = cfg.get_floats("box", [])
        box = None if not box else np.reshape(box, (-1, 2))
        split = split_validation(train.locations, locs, box, cfg.get_float("vicinity", 0.0125))
        for name, idx in (("near", split.near_data), ("far", split.far_data),
                          ("box", split.held_out_box)):
            if idx.size:
                rows.append({"dataset": name, "model": model,
                             **score_all(pred.subset(idx), truth[idx])})
    (out / "scores").mkdir(parents=True, exist_ok=True)
    write_score_table(out / "scores" / "scores.csv", rows)


def _write_classes(path, classes, n):
    colour = np.zeros(n, dtype=np.int64)
    for c, members in enumerate(classes):
        colour[np.asarray(members, dtype=np.int64)] = c
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "colour"])
        for i, c in enumerate(colour):
            w.writerow([i + 1, int(c) + 1])


def _run_colour(cfg, seed, workers, out):
    c = _demo_config(cfg, seed, workers)
    if "data" in cfg.values:
        data = read_points_csv(cfg.get_str("data"))
        x, z = data.locations, data.values
        lo, hi = x.min(axis=0), x.max(axis=0)
        extent = tuple((float(a), float(b)) for a, b in zip(lo, hi))
        meshes = build_meshes(c, extent, max(b - a for a, b in extent))
    else:
        from .experiments.demo2d import build_problem
        prob = build_problem(c)
        x, z, meshes = prob.x_train, prob.spec.z, prob.meshes
    spec = build_spec(x, z, meshes, c)
    g = GibbsSampler(spec, c.sampler, 1)
    d = out / "diagnostics"
    d.mkdir(parents=True, exist_ok=True)
    for k, classes in g.theta_classes.items():
        _write_classes(d / f"theta{k}_colours.csv", classes, spec.scales[k].n_theta)
    for k, per_tiling in g.tile_classes.items():
        for t, classes in enumerate(per_tiling, start=1):
            _write_classes(d / f"scale{k}_tiling{t}_colours.csv", classes,
                           g.tilings[k][t - 1].n_tiles)
    _write_classes(d / "theta_eps_colours.csv", g.eps_classes, spec.n_eps)
    g.close()
    log.info("colour conflicts detected: %d", g.colour_conflicts)


RUNNERS = {"simulate-b": _run_b, "simulate-c": _run_c, "fit": _run_fit,
           "predict": _run_predict, "score": _run_score, "colour": _run_colour}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msgmrf", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="flat 'key = value' configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory (default: ./out)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        seed = args.seed if args.seed is not None else cfg.get_int("seed", 1)
        workers = args.workers if args.workers is not None else cfg.get_int("workers", 1)
        out = Path(args.out if args.out is not None else cfg.get_str("out", "out"))
        cfg.used.update(seed=seed, workers=workers, out=str(out))
        out.mkdir(parents=True, exist_ok=True)
        RUNNERS[args.mode](cfg, seed, workers, out)
        echo = cfg.echo()
        echo["mode"] = args.mode
        write_config(out / "config_echo.txt", echo)
    except (MsgmrfError, OSError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
