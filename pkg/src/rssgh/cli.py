"""Command-line entry point ``rssgh``.

Subcommands: simulate, fit, netsurv, exceed, compare, diagnose.
Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 convergence failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .config import RunConfig, config_summary, load_config, parse_config
from .dataio import (load_chains, load_patient_columns, read_json, save_chain, save_patient_columns,
                     staged_output, write_json, write_table)
from .errors import (ConfigError, DomainError, GraphError, LifeTableLookupError, ModelSpecError,
                     NumericalError, SamplerError)
from .fit import FitResult, build_model, fit_model
from .hmc import diagnose
from .lifetable import load_lifetable, synthetic_lifetable
from .postprocess import (compare_models, default_grid, effect_draws, exceedance_probability,
                          net_survival_group, net_survival_marginal, net_survival_regions, pointwise_loglik,
                          pool_draws, psis_loo, thin, LooResult)
from .simulate import SimConfig, simulate_dataset
from .spatial import england_gor, load_adjacency

log = logging.getLogger("rssgh")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CONVERGENCE = 0, 2, 3, 4
RHAT_LIMIT = 1.05


# ---------------------------------------------------------------------------
# shared helpers


def _graph(cfg: RunConfig):
    p = cfg.path("adjacency")
    return load_adjacency(p) if p is not None else england_gor()


def _table(cfg: RunConfig, n_regions: int):
    p = cfg.path("lifetable")
    return load_lifetable(p) if p is not None else synthetic_lifetable(n_regions)


def _load_run(run_dir):
    """Rebuild config, model and chains from a fit output directory."""
    run_dir = Path(run_dir)
    if not (run_dir / "run.json").exists():
        raise ConfigError(f"{run_dir} is not a fit output directory (run.json missing)")
    meta = read_json(run_dir / "run.json")
    cfg = parse_config(meta["config"], check_paths=True)
    graph = _graph(cfg)
    table = None if cfg.model.overall_survival else _table(cfg, graph.n_regions)
    key_cols = () if table is None else table.key_columns
    spec = cfg.model
    declared = [*spec.hazard_covariates, *(c for c, _ in spec.spline_covariates)]
    cols = load_patient_columns(cfg.path("patients"), declared, key_cols)
    model = build_model(cols, spec, graph, table, cfg.hyper, cfg.standardize)
    chains = load_chains(run_dir)
    return cfg, model, chains


def _parse_times(text: str):
    try:
        t = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--t expects comma-separated numbers, got {text!r}") from None
    if not t or any(v < 0 for v in t):
        raise ConfigError("--t needs at least one time >= 0")
    return t


def _curve_rows(curves, labels):
    for c, lab in zip(curves, labels):
        if c is None:
            continue
        mean, lo, hi = c.mean, c.lower, c.upper
        for j, t in enumerate(c.times):
            yield [lab, t, mean[j], lo[j], hi[j]]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, check_paths=("lifetable", "adjacency"))
    sim_cfg = cfg.simulate or SimConfig(seed=cfg.seed)
    if args.n is not None:
        sim_cfg.n = int(args.n)
    graph = _graph(cfg)
    table = _table(cfg, graph.n_regions)
    sim = simulate_dataset(sim_cfg, graph, table)
    with staged_output(args.out) as tmp:
        save_patient_columns(sim.columns, tmp / "patients.csv")
        write_json(tmp / "truth.json", sim.truth)
    print(f"wrote {len(sim.columns['time'])} patients to {args.out} "
          f"(censoring {sim.truth['censoring_fraction']:.3f})")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config, check_paths=("lifetable", "adjacency"))
    if args.patients:
        cfg.paths["patients"] = str(Path(args.patients).resolve())
    if cfg.model is None:
        raise ConfigError("fit needs a [model] section")
    if cfg.path("patients") is None or not cfg.path("patients").exists():
        raise ConfigError("fit needs an existing paths.patients (or --patients)")
    for key in ("iterations", "warmup", "chains"):
        v = getattr(args, key)
        if v is not None:
            setattr(cfg.sampler, key, int(v))
    try:
        cfg.sampler.__post_init__()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    cfg.raw = config_summary(cfg)
    graph = _graph(cfg)
    table = None if cfg.model.overall_survival else _table(cfg, graph.n_regions)
    key_cols = () if table is None else table.key_columns
    spec = cfg.model
    declared = [*spec.hazard_covariates, *(c for c, _ in spec.spline_covariates)]
    cols = load_patient_columns(cfg.path("patients"), declared, key_cols)
    model = build_model(cols, spec, graph, table, cfg.hyper, cfg.standardize)
    res = fit_model(model, cfg.sampler)
    out = Path(args.out or cfg.paths.get("output") or "run")
    with staged_output(out) as tmp:
        for k, ch in enumerate(res.chains):
            save_chain(ch, tmp, k)
        write_json(tmp / "diagnostics.json", res.diagnostics.to_dict())
        write_json(tmp / "run.json", {"config": cfg.raw, "label": spec.label, "n": model.data.n,
                                      "n_events": model.data.n_obs,
                                      "scaling": getattr(model.data, "scaling", {})})
        summ = res.summary(cfg.output.level)
        write_table(tmp / "summary.csv", list(summ[0]), [list(r.values()) for r in summ])
        hyp = [r for r in summ if r["parameter"].startswith(("sigma_", "rho_", "tau_"))]
        if hyp:
            write_table(tmp / "hyperparameters.csv", list(hyp[0]), [list(r.values()) for r in hyp])
        loo = _loo(res, cfg)
        if loo is not None:
            write_json(tmp / "loo.json", loo.to_dict())
        if res.chains[0].draws.shape[0]:
            plotting.plot_traces(res.chains, tmp / "trace.png")
    print(f"fit {spec.label}: {model.data.n} patients, {sum(c.draws.shape[0] for c in res.chains)} draws "
          f"-> {out}")
    return EXIT_OK


def _loo(res: FitResult, cfg: RunConfig):
    z = thin(res.draws, cfg.output.max_draws)
    if z.shape[0] < 100:
        return None
    return psis_loo(pointwise_loglik(res.model, z), res.model.spec.label)


def cmd_netsurv(args) -> int:
    cfg, model, chains = _load_run(args.run)
    z = thin(pool_draws(chains), cfg.output.max_draws)
    times = _parse_times(args.t)
    grid = default_grid(model.data, cfg.output.grid_steps)
    grid = np.unique(np.concatenate([grid, times]))
    level = cfg.output.level
    if args.level == "region":
        curves = net_survival_regions(model, z, grid, level=level)
        names = model.graph.names if model.graph is not None else None
        labels = [names[i] if names else f"region {i + 1}" for i in range(model.r)]
    elif args.level == "marginal":
        curves = [net_survival_marginal(model, z, grid, level=level)]
        labels = ["all"]
    else:
        if not args.by:
            raise ConfigError("--level stratified needs --by COLUMN")
        cols = model.data.columns
        if args.by not in cols:
            raise ConfigError(f"unknown column {args.by!r} for --by")
        vals = np.asarray(cols[args.by])
        curves, labels = [], []
        for v in np.unique(vals):
            curves.append(net_survival_group(model, z, vals == v, grid, level=level))
            labels.append(f"{args.by}={v.item()}")
    out = Path(args.out or args.run)
    stem = f"netsurv_{args.level}" + (f"_{args.by}" if args.level == "stratified" else "")
    with staged_output(out) as tmp:
        write_table(tmp / f"{stem}.csv", ["group", "time", "mean", "lower", "upper"], _curve_rows(curves, labels))
        rows = []
        for c, lab in zip(curves, labels):
            if c is None:
                continue
            m, lo, hi = c.at(times)
            rows += [[lab, t, m[j], lo[j], hi[j]] for j, t in enumerate(times)]
        write_table(tmp / f"{stem}_at.csv", ["group", "time", "mean", "lower", "upper"], rows)
        plotting.plot_curves(curves, labels, tmp / f"{stem}.png", title=f"Net survival ({args.level})")
    for r in rows:
        print(f"{r[0]:>28s}  t={r[1]:g}  {r[2]:.3f} [{r[3]:.3f}, {r[4]:.3f}]")
    return EXIT_OK


def cmd_exceed(args) -> int:
    cfg, model, chains = _load_run(args.run)
    z = pool_draws(chains)
    eff = effect_draws(model, z, args.effect)
    prob = exceedance_probability(eff, args.threshold)
    names = model.graph.names
    labels = list(names) if names else [f"region {i + 1}" for i in range(model.r)]
    out = Path(args.out or args.run)
    stem = f"exceedance_{args.effect}"
    with staged_output(out) as tmp:
        write_table(tmp / f"{stem}.csv", ["region", "name", "threshold", "probability", "mean"],
                    [[i + 1, labels[i], args.threshold, prob[i], eff[:, i].mean()] for i in range(prob.size)])
        plotting.plot_exceedance(prob, labels, tmp / f"{stem}.png", args.threshold, args.effect)
    for i, p in enumerate(prob):
        print(f"{labels[i]:>28s}  P({args.effect} > {args.threshold:g}) = {p:.3f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    results = []
    for run in args.runs:
        p = Path(run) / "loo.json"
        if p.exists():
            r = LooResult.from_dict(read_json(p))
        else:
            cfg, model, chains = _load_run(run)
            z = thin(pool_draws(chains), cfg.output.max_draws)
            r = psis_loo(pointwise_loglik(model, z), model.spec.label)
        r.name = str(Path(run).name) if not r.name or args.by_path else r.name
        results.append(r)
    names = [r.name for r in results]
    if len(set(names)) != len(names):
        for r, run in zip(results, args.runs):
            r.name = f"{r.name} ({Path(run).name})"
    report = compare_models(results)
    out = Path(args.out)
    with staged_output(out) as tmp:
        d = report.to_dict()
        d["pareto_k_counts"] = {r.name: r.k_counts() for r in results}
        write_json(tmp / "comparison.json", d)
        write_table(tmp / "comparison.csv", ["model", "elpd_loo", "se", "elpd_diff", "se_diff"],
                    [list(r.values()) for r in report.rows()])
        plotting.plot_comparison(report, tmp / "comparison.png")
    for r in report.rows():
        print(f"{r['model']:>28s}  elpd {r['elpd_loo']:10.1f} ({r['se']:.1f})  "
              f"diff {r['elpd_diff']:8.1f} ({r['se_diff']:.1f})")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    chains = load_chains(args.run)
    diag = diagnose(chains)
    width = max(len(n) for n in diag.names)
    print(f"{'parameter':>{width}s}    rhat       ess")
    for n, r, e in zip(diag.names, diag.rhat, diag.ess):
        flag = "  *" if not r <= RHAT_LIMIT else ""
        print(f"{n:>{width}s}  {r:6.3f}  {e:8.0f}{flag}")
    print(f"divergences per chain: {diag.divergences}")
    bad = [n for n, r in zip(diag.names, diag.rhat) if not np.isnan(r) and not r <= RHAT_LIMIT]
    if bad:
        print(f"{len(bad)} parameter(s) with rhat > {RHAT_LIMIT}", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rssgh", description="Relative survival models with regional effects.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic patient file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, help="override the number of patients")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="sample the posterior")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--patients", help="override paths.patients")
    p.add_argument("--iterations", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--chains", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("netsurv", help="net survival curves from a fit")
    p.add_argument("run")
    p.add_argument("--level", choices=("region", "marginal", "stratified"), default="region")
    p.add_argument("--by", help="column defining strata for --level stratified")
    p.add_argument("--t", default="1,3", help="comma-separated report times (years)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_netsurv)

    p = sub.add_parser("exceed", help="regional exceedance probabilities")
    p.add_argument("run")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--effect", choices=("u", "u_tilde"), default="u")
    p.add_argument("--out")
    p.set_defaults(func=cmd_exceed)

    p = sub.add_parser("compare", help="rank fits by PSIS-LOO")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--by-path", action="store_true", help="label models by run directory name")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="print rhat / ESS / divergences")
    p.add_argument("run")
    p.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ModelSpecError, DomainError, GraphError, LifeTableLookupError,
            FileNotFoundError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SamplerError as e:
        print(f"error: sampler failure: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
