"""Batch command-line front end.

    datamdp complexity  --config run.yaml --out DIR
    datamdp certify     --config run.yaml --out DIR [--workers K] [--override-samples]
    datamdp abstract    --config run.yaml --out DIR --mode imdp|mle|model
    datamdp synthesize  --config run.yaml --out DIR --abstraction FILE
    datamdp simulate    --config run.yaml --out DIR --policy FILE [--compare-policy FILE]
    datamdp report      --config run.yaml --out DIR [--certificate F] [--abstraction F] --policy F

Exit codes: 0 success (``certify``: certified), 2 ``certify`` did not
certify, 1 any error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import artifacts as art
from .config import RunConfig, load_config
from .errors import ConfigError, DataMdpError, InvalidParameter
from .estimator import IntervalMdp, estimate_imdp, imdp_rho, mle_mdp, model_based_mdp
from .sbf import compose_guarantee, sample_condition_slacks, closeness_bound
from .scenario import (CERTIFIED, ScenarioConfig, build_scp, certify, default_bounds, estimate_Q_pilot,
                       free_variable_count, min_transition_samples_G, solve_scp)
from .synth import (closed_loop_sim, compare_trajectories, robust_safety_value_iteration,
                    safety_value_iteration, write_errors_csv, write_trajectories_csv)

log = logging.getLogger("datamdp")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CERTIFIED = 0, 1, 2


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _scenario_config(cfg: RunConfig, grid, c_default: int, Q) -> ScenarioConfig:
    sc = cfg.scenario
    n = len(cfg.grid) if cfg.grid else grid.n
    return ScenarioConfig(sc.eps1, sc.beta1, sc.beta2, sc.mu, sc.resolve_L_g(grid), n,
                          sc.c if sc.c is not None else c_default, Q)


def _bounds(cfg: RunConfig, basis):
    s = cfg.sbf
    try:
        return default_bounds(basis, s.bounds, s.freeze, s.alpha_min, s.limit)
    except InvalidParameter as exc:
        raise ConfigError("sbf", str(exc)) from None


# -- complexity -----------------------------------------------------------

def cmd_complexity(args, cfg: RunConfig) -> int:
    cfg.require("scenario")
    grid = None
    if cfg.system is not None and cfg.grid is not None:
        sys_ = cfg.build_system()
        grid = cfg.build_grid(sys_)
    elif cfg.grid is None:
        raise ConfigError("grid", "section required to fix the state dimension")
    c_default = None
    if cfg.sbf is not None:
        basis = cfg.sbf.basis(len(cfg.grid))
        c_default = free_variable_count(*_bounds(cfg, basis))
    if cfg.scenario.c is None and c_default is None:
        raise ConfigError("scenario.c", "give c or an sbf section to count free variables")
    sc = _scenario_config(cfg, grid, c_default, cfg.scenario.Q)
    summary = {"eps1": sc.eps1, "L_g": sc.L_g, "n": sc.n, "c": sc.c, "eps2": sc.eps2, "N": sc.N,
               "M": sc.M, "beta1": sc.beta1, "beta2": sc.beta2}
    lb = cfg.scenario.lipschitz_bound(grid) if cfg.scenario.lipschitz else None
    if lb is not None:
        summary["lipschitz"] = {"dynamics_term": lb.dynamics_term, "quadratic_term": lb.quadratic_term,
                                "L_g_from_inputs": lb.L_g}
    beta3 = 0.0
    if cfg.imdp is not None:
        G = min_transition_samples_G(cfg.imdp.eps_bar, cfg.imdp.beta_bar)
        summary["G"] = G
        if grid is not None:
            entries = grid.n_cells * len(sys_.inputs) * (grid.n_cells + 1)
            beta3 = entries * cfg.imdp.beta_bar
            summary["imdp_entries"] = entries
            summary["rho_per_step"] = 2 * cfg.imdp.eps_bar * grid.n_cells
    summary["beta3"] = beta3
    summary["confidence"] = 1.0 - sc.beta1 - sc.beta2 - beta3
    out = _out_dir(args, cfg)
    _write_json(out / "complexity.json", summary)
    width = max(len(k) for k in summary)
    for k, v in summary.items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                print(f"{k + '.' + kk:<{width + 16}} {vv}")
        else:
            print(f"{k:<{width + 16}} {v}")
    return EXIT_OK


# -- certify --------------------------------------------------------------

def run_certify(cfg: RunConfig, *, workers: int = 1, override_samples: bool = False, dump_lp=None):
    """End-to-end SBF certification; returns ``(certificate document, metrics)``."""
    cfg.require("system", "grid", "sbf", "scenario")
    t0 = time.perf_counter()
    sys_ = cfg.build_system()
    grid = cfg.build_grid(sys_)
    basis = cfg.sbf.basis(sys_.n)
    lower, upper = _bounds(cfg, basis)
    sc = cfg.scenario
    Q = sc.Q
    if sc.pilot_Q:
        q_ref = np.clip(np.ones(basis.r), lower[2:-1], upper[2:-1])
        Q = estimate_Q_pilot(sys_, grid, basis, q_ref, seed=cfg.seed)
    scfg = _scenario_config(cfg, grid, free_variable_count(lower, upper), Q)
    N = sc.N if sc.N is not None else scfg.N
    M = sc.M if sc.M is not None else scfg.M
    if M is None:
        raise ConfigError("scenario.M", "required when neither Q nor pilot_Q is given")
    rows = 2 * N * grid.n_cells * len(sys_.inputs)
    if rows > sc.max_rows:
        raise ConfigError("scenario.max_rows",
                          f"program would have {rows} rows (N={N}, cells={grid.n_cells}, "
                          f"inputs={len(sys_.inputs)}); raise max_rows or reduce the scale")
    t1 = time.perf_counter()
    program = build_scp(sys_, grid, basis, N, M, sc.mu, cfg.seed, workers=workers)
    t2 = time.perf_counter()
    p = program.to_linear_program(lower, upper)
    if dump_lp is not None:
        program.dump(dump_lp, lower, upper)
    sol, stats = solve_scp(p, tol=sc.lp_tol, maximize_alpha=cfg.sbf.maximize_alpha)
    t3 = time.perf_counter()
    if not sol.optimal:
        raise DataMdpError(f"scenario program is {sol.status}"
                           + (" (check frozen variables and bounds)" if sol.status == "Infeasible" else ""))
    cert = certify(program, scfg, sol, override_samples=override_samples)
    slack = sample_condition_slacks(cert.template, sys_, grid, 200, M, cfg.seed, sc.mu)
    t4 = time.perf_counter()
    doc = art.certificate_doc(
        cert, seeds={"system": cfg.seed, "source": cfg.seed_source}, grid=grid,
        system={"name": sys_.name, "params": sys_.params, "inputs": sys_.inputs.to_list(),
                "noise_mode": sys_.noise_mode},
        lp_stats={**stats, "bounds_lower": lower.tolist(), "bounds_upper": upper.tolist(),
                  "holdout_worst_g1": slack.worst_g1 - cert.upsilon,
                  "holdout_worst_g2": slack.worst_g2 - cert.upsilon})
    metrics = {"setup_s": t1 - t0, "assemble_s": t2 - t1, "solve_s": t3 - t2, "check_s": t4 - t3,
               "total_s": t4 - t0, "rows": p.n_rows, "workers": workers}
    return doc, metrics


def cmd_certify(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    doc, metrics = run_certify(cfg, workers=args.workers, override_samples=args.override_samples,
                               dump_lp=out / "scp.lp" if args.dump_lp else None)
    art.save(out / "certificate.json", doc)
    _write_json(out / "metrics.json", metrics)
    c = doc["certificate"]
    t = c["template"]
    print(f"verdict      {c['verdict']}")
    print(f"upsilon*     {c['upsilon']:.6g}   (+eps1 = {c['margin']:.6g})")
    print(f"alpha, psi   {t['alpha']:.6g}, {t['psi']:.6g}")
    print(f"q            {', '.join(f'{v:.6g}' for v in t['q'])}")
    print(f"samples      N={c['n_samples']} (required {c['N_required']}), M={c['M']} "
          f"(required {c['M_required']})")
    print(f"confidence   {c['confidence']:.6g}")
    print(f"rows         {metrics['rows']}  solve {metrics['solve_s']:.2f}s  total {metrics['total_s']:.2f}s")
    return EXIT_OK if c["verdict"] == CERTIFIED else EXIT_NOT_CERTIFIED


# -- abstract -------------------------------------------------------------

def run_abstract(cfg: RunConfig, mode: str, *, workers: int = 1) -> dict:
    cfg.require("system", "grid")
    sys_ = cfg.build_system()
    grid = cfg.build_grid(sys_)
    seeds = {"system": cfg.seed, "source": cfg.seed_source}
    if mode == "imdp":
        im = cfg.require("imdp")
        model = estimate_imdp(sys_, grid, im.eps_bar, im.beta_bar, cfg.seed, workers=workers)
        extra = {"beta3": model.beta3, "G": int(model.G.max())}
    elif mode == "mle":
        ml = cfg.require("mle")
        model, fit = mle_mdp(sys_, grid, ml.n_hat, ml.pilot, cfg.seed)
        extra = {"fit_mean": fit.mean.tolist(), "fit_std": fit.std.tolist(), "n_hat": fit.n,
                 "pilot": ml.pilot}
    elif mode == "model":
        model = model_based_mdp(sys_, grid)
        extra = {"noise_std": np.asarray(sys_.noise_std, dtype=float).tolist()}
    else:
        raise ConfigError("--mode", f"unknown mode {mode!r}")
    extra["mode"] = mode
    return art.abstraction_doc(model, seeds=seeds, extra=extra)


def cmd_abstract(args, cfg: RunConfig) -> int:
    doc = run_abstract(cfg, args.mode, workers=args.workers)
    path = _out_dir(args, cfg) / f"abstraction_{args.mode}.json"
    art.save(path, doc)
    print(f"wrote {path}")
    return EXIT_OK


# -- synthesize -----------------------------------------------------------

def run_synthesize(cfg: RunConfig, abstraction_path) -> dict:
    sp = cfg.require("spec")
    ab = art.read_abstraction(abstraction_path)
    model = ab.model
    if isinstance(model, IntervalMdp):
        values, policy = robust_safety_value_iteration(model, sp.spec)
    else:
        values, policy = safety_value_iteration(model, sp.spec)
    init = sp.init_point
    cell = int(model.grid.project(init).index)
    initial = {"point": init.tolist(), "cell": cell,
               "value": float(values.V[0, cell]) if cell != model.grid.absorbing else 0.0}
    bundle = art.PolicyBundle(policy, values, sp.spec, model.grid, model.inputs, ab.kind, initial)
    doc = art.policy_doc(bundle)
    doc["abstraction"] = {"path": Path(abstraction_path).name, "mode": ab.extra.get("mode"),
                          "seeds": ab.seeds}
    return doc


def cmd_synthesize(args, cfg: RunConfig) -> int:
    doc = run_synthesize(cfg, args.abstraction)
    stem = Path(args.abstraction).stem.replace("abstraction", "policy", 1)
    path = _out_dir(args, cfg) / f"{stem if stem.startswith('policy') else 'policy_' + stem}.json"
    art.save(path, doc)
    print(f"wrote {path}  initial value {doc['initial']['value']:.6g}")
    return EXIT_OK


# -- simulate -------------------------------------------------------------

def _simulate(cfg: RunConfig, bundle: art.PolicyBundle):
    sim = cfg.simulate
    runs = sim.runs if sim else 10
    seed = sim.seed if sim and sim.seed is not None else cfg.seed
    x0 = sim.x0 if sim and sim.x0 is not None else np.asarray(bundle.initial["point"], dtype=float)
    sys_ = cfg.build_system()
    if sys_.inputs != bundle.inputs:
        raise InvalidParameter("policy input set does not match the configured system")
    return sys_, closed_loop_sim(sys_, bundle.grid, bundle.policy, bundle.spec, runs, seed, x0)


def cmd_simulate(args, cfg: RunConfig) -> int:
    cfg.require("system")
    out = _out_dir(args, cfg)
    bundle = art.read_policy(args.policy)
    sys_, res = _simulate(cfg, bundle)
    tag = Path(args.policy).stem
    d = out / f"sim_{tag}"
    d.mkdir(exist_ok=True)
    for r in range(res.states.shape[0]):
        one = type(res)(res.states[r:r + 1], res.inputs[r:r + 1], res.safe[r:r + 1])
        write_trajectories_csv(d / f"run_{r:03d}.csv", one, sys_)
    write_trajectories_csv(out / f"trajectories_{tag}.csv", res, sys_)
    summary = {"policy": Path(args.policy).name, "runs": int(res.safe.size),
               "safe_runs": int(res.safe.sum()), "frequency": res.frequency}
    if args.compare_policy:
        other = art.read_policy(args.compare_policy)
        _, res_b = _simulate(cfg, other)
        err = compare_trajectories(res.states, res_b.states)
        otag = Path(args.compare_policy).stem
        write_errors_csv(out / f"errors_{tag}_vs_{otag}.csv", err)
        summary["compare"] = {"policy": Path(args.compare_policy).name, "frequency": res_b.frequency,
                              "max_error": float(np.nanmax(err)) if np.isfinite(err).any() else None}
    _write_json(out / f"simulation_{tag}.json", summary)
    print(f"safe runs {summary['safe_runs']}/{summary['runs']}")
    if "compare" in summary:
        print(f"max trajectory error vs {summary['compare']['policy']}: {summary['compare']['max_error']}")
    return EXIT_OK


# -- report ---------------------------------------------------------------

def run_report(cfg: RunConfig, policy_path, certificate_path=None, abstraction_path=None) -> dict:
    sp = cfg.require("spec")
    bundle = art.read_policy(policy_path)
    grid = bundle.grid
    a = sp.init_point
    proj = grid.project(a)
    if proj.index == grid.absorbing:
        raise InvalidParameter("initial state lies outside the state box")
    p_hat = float(bundle.values.V[0, proj.index])
    T, eps = sp.spec.horizon, sp.spec.epsilon
    flags = []
    beta1 = beta2 = beta3 = 0.0
    delta = 1.0
    extra = {}
    if certificate_path is not None:
        cert, cdoc = art.read_certificate(certificate_path)
        beta1, beta2 = cert.beta1, cert.beta2
        if cdoc["grid"] != grid.to_dict():
            flags.append("CERTIFICATE_GRID_MISMATCH")
        s = float(cert.template(a, proj.point))
        extra.update(S_init=s, verdict=cert.verdict, alpha=cert.template.alpha, psi=cert.template.psi)
        if s < 0:
            flags.append("NEGATIVE_S_CLAMPED")
            s = 0.0
        if eps > 0:
            delta = closeness_bound(s, cert.template.alpha, cert.template.psi, T, eps).raw
        else:
            flags.append("ZERO_EPSILON")
            delta = float("inf") if s + cert.template.psi * T > 0 else 0.0
        if cert.verdict != CERTIFIED:
            flags.append(f"SBF_{cert.verdict}")
    else:
        flags.append("NO_CERTIFICATE")
    rho = 0.0
    if bundle.abstraction_kind == "imdp":
        if abstraction_path is None:
            raise ConfigError("--abstraction", "needed to compute rho for an interval abstraction")
        ab = art.read_abstraction(abstraction_path)
        if not isinstance(ab.model, IntervalMdp):
            raise InvalidParameter("policy was synthesized on an interval abstraction, file is not one")
        rho = imdp_rho(ab.model, T)
        beta3 = ab.model.beta3
    else:
        flags.append("POINT_ABSTRACTION_NO_RHO")
    rep = compose_guarantee(p_hat, min(delta, 1e300), rho, beta1, beta2, beta3, epsilon=eps, horizon=T)
    doc = {"format": "datamdp/report", "version": art.VERSION, **rep.to_dict(),
           "flags": rep.flags + flags, "initial": {"point": a.tolist(), "cell": int(proj.index),
                                                    "representative": proj.point.tolist()}, **extra}
    return doc


def cmd_report(args, cfg: RunConfig) -> int:
    doc = run_report(cfg, args.policy, args.certificate, args.abstraction)
    out = _out_dir(args, cfg)
    _write_json(out / "report.json", doc)
    print(f"P_hat        {doc['p_hat']:.6g}")
    print(f"delta        {doc['delta_raw']:.6g}")
    print(f"rho          {doc['rho_raw']:.6g}")
    print(f"lower bound  {doc['lower_bound']:.6g}  (raw {doc['lower_bound_raw']:.6g})")
    print(f"confidence   {doc['confidence']:.6g}  (betas {doc['betas']})")
    print(f"flags        {', '.join(doc['flags']) or '-'}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--out", help="output directory (default: config output.dir or cwd)")
    common.add_argument("--workers", type=int, default=1, help="parallel workers (results do not depend on it)")
    common.add_argument("--seed-entropy", action="store_true", help="ignore configured seeds, use OS entropy")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="datamdp", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("complexity", parents=[common], help="sample sizes and confidence ledger")
    c = sub.add_parser("certify", parents=[common], help="sample, solve and certify an SBF")
    c.add_argument("--override-samples", action="store_true",
                   help="allow fewer samples than required (verdict becomes UNSOUND_SCALE)")
    c.add_argument("--dump-lp", action="store_true", help="also write the assembled program as text")
    a = sub.add_parser("abstract", parents=[common], help="build a finite abstraction")
    a.add_argument("--mode", choices=("imdp", "mle", "model"), default="imdp")
    s = sub.add_parser("synthesize", parents=[common], help="safety value iteration")
    s.add_argument("--abstraction", required=True)
    m = sub.add_parser("simulate", parents=[common], help="closed-loop simulation")
    m.add_argument("--policy", required=True)
    m.add_argument("--compare-policy", help="second policy simulated under the same noise")
    r = sub.add_parser("report", parents=[common], help="compose the end-to-end guarantee")
    r.add_argument("--policy", required=True)
    r.add_argument("--certificate")
    r.add_argument("--abstraction")
    return ap


COMMANDS = {"complexity": cmd_complexity, "certify": cmd_certify, "abstract": cmd_abstract,
            "synthesize": cmd_synthesize, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        cfg = load_config(args.config, seed_entropy=args.seed_entropy)
        if args.seed_entropy and cfg.system is not None:
            print(f"seed (entropy) {cfg.seed}", file=sys.stderr)
        return COMMANDS[args.command](args, cfg)
    except DataMdpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(f"diagnostics: {json.dumps(diag, default=str)[:2000]}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
