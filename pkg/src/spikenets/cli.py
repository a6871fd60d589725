"""Command-line pipeline: simulate, fit, infer, eval, and prep subcommands.

Every subcommand is driven by a JSON config file; unknown keys are
rejected, defaults are filled in, and the fully resolved configuration is
written next to the outputs so any run can be reproduced byte-for-byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (export_dot, read_anchor_csv, read_event_csv, read_matrix_csv,
                     read_panel_csv, read_vector_csv, write_json, write_matrix_csv,
                     write_panel_csv, write_vector_csv, TrialWindow, bin_events,
                     filter_neurons, filter_trials)
from .evalrun import Scenario, build_centered_basis, run_monte_carlo
from .fit import FitOptions, ModelFit, NeuronFit, fit_network, fitted_trends, select_lambda
from .infer import confidence_intervals, desparsify, significance_filter
from .metrics import EvalReport, auc_support, mean_report, mse_vector, rmse_gamma
from .netsim import (NETWORK_KINDS, RNG_ALGORITHM, NetworkSpec, chain_edge_budget,
                     simulate_bapla, trend_curve)


class ConfigError(ValueError):
    pass


def _check_keys(cfg: dict, allowed: set[str], context: str) -> None:
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {context}")


def _require(cfg: dict, key: str, context: str):
    if key not in cfg:
        raise ConfigError(f"missing key {key!r} in {context}")
    return cfg[key]


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


# ---------------------------------------------------------------------------
# config blocks


def network_from_config(cfg: dict) -> tuple[NetworkSpec, dict]:
    kind = _require(cfg, "kind", "network")
    if kind not in NETWORK_KINDS:
        raise ConfigError(f"unknown network kind {kind!r} (expected one of {NETWORK_KINDS})")
    base = {"kind", "d", "magnitude", "sign_mix"}
    extra = {"chain": set(), "erdos_renyi": {"edge_count"},
             "stochastic_block": {"block_sizes", "p_within", "p_between"}}[kind]
    _check_keys(cfg, base | extra, "network")
    d = int(_require(cfg, "d", "network"))
    spec = NetworkSpec(
        kind=kind, d=d,
        magnitude=float(cfg.get("magnitude", 0.3)),
        sign_mix=float(cfg.get("sign_mix", 0.5)),
        edge_count=(int(cfg.get("edge_count", chain_edge_budget(d)))
                    if kind == "erdos_renyi" else None),
        block_sizes=(tuple(int(b) for b in _require(cfg, "block_sizes", "network"))
                     if kind == "stochastic_block" else None),
        p_within=float(cfg["p_within"]) if kind == "stochastic_block" else None,
        p_between=float(cfg["p_between"]) if kind == "stochastic_block" else None,
    )
    resolved = {k: v for k, v in dataclasses.asdict(spec).items() if v is not None}
    return spec, resolved


_TREND_ALIASES = {"normal": "normal_pdf", "gamma": "gamma_pdf",
                  "normal_pdf": "normal_pdf", "gamma_pdf": "gamma_pdf", "zero": "zero"}


def trend_from_config(cfg: dict) -> tuple[str, dict, float | None, float, dict]:
    family = _TREND_ALIASES.get(cfg.get("family", "normal"))
    if family is None:
        raise ConfigError(f"unknown trend family {cfg.get('family')!r} in trend")
    param_keys = {"normal_pdf": {"mu", "sigma"}, "gamma_pdf": {"shape", "rate"},
                  "zero": set()}[family]
    _check_keys(cfg, param_keys | {"family", "amplitude", "peak"}, "trend")
    defaults = {"mu": 0.5, "sigma": 0.1, "shape": 2.0, "rate": 8.0}
    params = {k: float(cfg.get(k, defaults[k])) for k in param_keys}
    amplitude = cfg.get("amplitude")
    amplitude = None if amplitude is None else float(amplitude)
    peak = float(cfg.get("peak", 2.0))
    resolved = {"family": family, **params, "amplitude": amplitude, "peak": peak}
    return family, params, amplitude, peak, resolved


def fit_options_from_config(cfg: dict) -> FitOptions:
    allowed = {f.name for f in dataclasses.fields(FitOptions)}
    _check_keys(cfg, allowed, "fit_options")
    return FitOptions(**cfg)


def _out_dir(cfg: dict, args) -> Path:
    out = args.out or cfg.get("out")
    if not out:
        raise ConfigError("no output directory: set 'out' in the config or pass --out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _float_cell(x) -> str:
    return "" if x is None else f"{x:.9g}"


def _write_report_csv(path, rows: list[tuple[str, str, EvalReport]]) -> None:
    header = "scenario,rep," + ",".join(EvalReport.COLUMNS)
    lines = [header]
    for label, rep, report in rows:
        lines.append(f"{label},{rep}," + ",".join(_float_cell(v) for v in report.row()))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict, args) -> int:
    _check_keys(cfg, {"network", "trend", "beta", "n", "trials", "seed",
                      "bin_width_ms", "out"}, "simulate config")
    if args.seed is not None:
        cfg["seed"] = args.seed
    seed = int(_require(cfg, "seed", "simulate config"))
    n = int(_require(cfg, "n", "simulate config"))
    trials = int(cfg.get("trials", 1))
    spec, net_resolved = network_from_config(dict(_require(cfg, "network", "simulate config")))
    family, params, amplitude, peak, trend_resolved = trend_from_config(dict(cfg.get("trend", {})))
    beta_cfg = cfg.get("beta", 0.1)
    betas = np.broadcast_to(np.asarray(beta_cfg, dtype=float), (spec.d,)).copy()
    out = _out_dir(cfg, args)

    truth = spec.sample(seed)
    if amplitude is None:
        sc = Scenario(network=spec, trend_family=family, trend_params=params,
                      trend_peak=peak, n=n)
        amplitude = sc.resolve_amplitude()
    curve = trend_curve(family, params, amplitude, n)
    truth_f = np.tile(curve.values, (spec.d, 1))
    panel = simulate_bapla(truth, betas, truth_f, n, trials, seed)
    panel.bin_width_ms = float(cfg.get("bin_width_ms", 1.0))

    write_panel_csv(panel, out / "panel.csv")
    write_matrix_csv(truth, out / "truth_gamma.csv")
    write_vector_csv(betas, out / "truth_beta.csv")
    write_matrix_csv(truth_f, out / "truth_f.csv")
    resolved = {"network": net_resolved, "trend": {**trend_resolved, "amplitude": amplitude},
                "beta": beta_cfg, "n": n, "trials": trials, "seed": seed,
                "bin_width_ms": panel.bin_width_ms, "out": str(out)}
    write_json({**resolved, "rng": RNG_ALGORITHM}, out / "sim_meta.json")
    write_json(resolved, out / "resolved_config.json")
    return 0


def _write_fit_artifacts(out: Path, model_fit: ModelFit, panel, m: int, degree: int,
                         opts: FitOptions, resolved: dict) -> None:
    write_matrix_csv(model_fit.interaction, out / "gamma.csv")
    write_vector_csv(np.array([f.beta for f in model_fit.fits]), out / "beta.csv")
    if m > 0:
        write_matrix_csv(np.vstack([f.spline_coefs for f in model_fit.fits]),
                         out / "spline_coefs.csv")
    write_matrix_csv(fitted_trends(model_fit), out / "fhat.csv")
    meta = {
        "lambda_star": model_fit.lambda_star,
        "m": m, "degree": degree,
        "options": dataclasses.asdict(opts),
        "neuron_ids": list(panel.neuron_ids),
        "converged": [f.converged for f in model_fit.fits],
        "iterations": [f.iterations for f in model_fit.fits],
        "neg_loglik": [f.neg_loglik for f in model_fit.fits],
    }
    write_json(meta, out / "fit_meta.json")
    write_json(resolved, out / "resolved_config.json")


def cmd_fit(cfg: dict, args) -> int:
    _check_keys(cfg, {"panel", "m", "degree", "lambda", "threads",
                      "fit_options", "refit", "out"}, "fit config")
    if args.m is not None:
        cfg["m"] = args.m
    if args.lam is not None:
        cfg["lambda"] = args.lam
    if args.threads is not None:
        cfg["threads"] = args.threads
    panel_path = _require(cfg, "panel", "fit config")
    panel = read_panel_csv(panel_path)
    m = int(cfg.get("m", 10))
    degree = int(cfg.get("degree", 3))
    threads = int(cfg.get("threads", 1))
    opts = fit_options_from_config(dict(cfg.get("fit_options", {})))
    out = _out_dir(cfg, args)

    refit = bool(cfg.get("refit", False))
    bas = build_centered_basis(m, degree, panel.n_bins)
    lam = cfg.get("lambda")
    if lam is None:
        lam = select_lambda(panel, bas, opts)
    model_fit = fit_network(panel, bas, lam, opts, threads=threads, refit=refit)
    stragglers = [panel.neuron_ids[i] for i, f in enumerate(model_fit.fits)
                  if not f.converged]
    if stragglers:
        print(f"warning: fit did not converge for {', '.join(stragglers)}",
              file=sys.stderr)
    resolved = {"panel": str(panel_path), "m": m, "degree": degree,
                "lambda": model_fit.lambda_star, "threads": threads, "refit": refit,
                "fit_options": dataclasses.asdict(opts), "out": str(out)}
    _write_fit_artifacts(out, model_fit, panel, m, degree, opts, resolved)
    return 0


def _load_model_fit(fit_dir: Path, panel) -> tuple[ModelFit, int, int]:
    meta = json.loads((fit_dir / "fit_meta.json").read_text())
    m, degree = int(meta["m"]), int(meta["degree"])
    gamma = read_matrix_csv(fit_dir / "gamma.csv")
    beta = read_vector_csv(fit_dir / "beta.csv")
    d = gamma.shape[0]
    if m > 0:
        coefs = read_matrix_csv(fit_dir / "spline_coefs.csv")
    else:
        coefs = np.zeros((d, 0))
    bas = build_centered_basis(m, degree, panel.n_bins)
    lam_star = meta["lambda_star"]
    lams = np.broadcast_to(np.asarray(lam_star, dtype=float), (d,))
    fits = [NeuronFit(beta=float(beta[i]), gamma=gamma[i], spline_coefs=coefs[i],
                      lam=float(lams[i]), neg_loglik=float(meta["neg_loglik"][i]),
                      iterations=int(meta["iterations"][i]),
                      converged=bool(meta["converged"][i]))
            for i in range(d)]
    return ModelFit(fits=fits, basis=bas, interaction=gamma, lambda_star=lam_star), m, degree


def cmd_infer(cfg: dict, args) -> int:
    _check_keys(cfg, {"panel", "fit_dir", "alpha", "out"}, "infer config")
    if args.alpha is not None:
        cfg["alpha"] = args.alpha
    panel_path = _require(cfg, "panel", "infer config")
    fit_dir = Path(_require(cfg, "fit_dir", "infer config"))
    alpha = float(cfg.get("alpha", 0.05))
    out = _out_dir(cfg, args)

    panel = read_panel_csv(panel_path)
    model_fit, m, degree = _load_model_fit(fit_dir, panel)
    desp = desparsify(model_fit, panel, model_fit.basis)
    cis = confidence_intervals(desp, alpha)
    filtered = significance_filter(model_fit, cis)

    write_matrix_csv(desp.gamma_desp, out / "gamma_desp.csv")
    write_matrix_csv(cis.lower, out / "ci_lower.csv")
    write_matrix_csv(cis.upper, out / "ci_upper.csv")
    np.savetxt(out / "significant.csv", cis.significant.astype(int), fmt="%d", delimiter=",")
    write_matrix_csv(filtered, out / "gamma_filtered.csv")

    excluded: list[str] = []
    for entry in panel.meta.get("filters", []):
        excluded.extend(entry.get("excluded_neurons", []))
    export_dot(filtered, cis.significant, excluded, out / "network.dot",
               neuron_ids=list(panel.neuron_ids) + excluded)
    write_json({"alpha": alpha, "n_effective": desp.n_effective,
                "inverse_diagnostics": desp.theta_condition},
               out / "inference_meta.json")
    resolved = {"panel": str(panel_path), "fit_dir": str(fit_dir),
                "alpha": alpha, "out": str(out)}
    write_json(resolved, out / "resolved_config.json")
    return 0


def _scenario_from_config(cfg: dict, args) -> tuple[Scenario, dict]:
    _check_keys(cfg, {"network", "trend", "beta", "n", "trials", "m", "degree",
                      "alpha", "lambda", "refit", "auc_on"}, "scenario")
    spec, net_resolved = network_from_config(dict(_require(cfg, "network", "scenario")))
    family, params, amplitude, peak, trend_resolved = trend_from_config(dict(cfg.get("trend", {})))
    auc_on = cfg.get("auc_on", "penalized")
    if auc_on not in ("penalized", "desparsified"):
        raise ConfigError("scenario auc_on must be 'penalized' or 'desparsified'")
    scenario = Scenario(
        network=spec, trend_family=family, trend_params=params,
        trend_amplitude=amplitude, trend_peak=peak,
        beta=float(cfg.get("beta", 0.1)), n=int(_require(cfg, "n", "scenario")),
        trials=int(cfg.get("trials", 1)), m=int(cfg.get("m", 10)),
        degree=int(cfg.get("degree", 3)), alpha=float(cfg.get("alpha", 0.05)),
        lam=(float(cfg["lambda"]) if cfg.get("lambda") is not None else None),
        refit=bool(cfg.get("refit", True)),
        auc_on_desparsified=(auc_on == "desparsified"),
    )
    if args.m is not None:
        scenario = scenario.with_m(args.m)
    if args.lam is not None:
        scenario = dataclasses.replace(scenario, lam=args.lam)
    if args.alpha is not None:
        scenario = dataclasses.replace(scenario, alpha=args.alpha)
    resolved = {"network": net_resolved, "trend": trend_resolved,
                "beta": scenario.beta, "n": scenario.n, "trials": scenario.trials,
                "m": scenario.m, "degree": scenario.degree, "alpha": scenario.alpha,
                "lambda": scenario.lam, "refit": scenario.refit, "auc_on": auc_on}
    return scenario, resolved


def _cmd_eval_scenario(cfg: dict, args) -> int:
    _check_keys(cfg, {"scenario", "reps", "seed", "threads", "fit_options", "out"},
                "eval config")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    scenario, scen_resolved = _scenario_from_config(
        dict(_require(cfg, "scenario", "eval config")), args)
    opts = fit_options_from_config(dict(cfg.get("fit_options", {})))
    scenario = dataclasses.replace(scenario, opts=opts,
                                   threads=int(cfg.get("threads", 1)))
    reps = int(cfg.get("reps", 1))
    seed = int(_require(cfg, "seed", "eval config"))
    out = _out_dir(cfg, args)

    results = run_monte_carlo(scenario, reps, seed)
    label = f"{scenario.network.kind}_d{scenario.network.d}_n{scenario.n}"
    _write_report_csv(out / "eval_reps.csv",
                      [(label, str(r), res.report) for r, res in enumerate(results)])
    summary = mean_report([res.report for res in results])
    _write_report_csv(out / "eval_summary.csv", [(label, str(summary.rep_count), summary)])
    write_json({"lambda_per_rep": [res.lam for res in results],
                "significant_edges_per_rep": [res.significant_edges for res in results]},
               out / "eval_meta.json")
    resolved = {"scenario": scen_resolved, "reps": reps, "seed": seed,
                "threads": scenario.threads,
                "fit_options": dataclasses.asdict(opts), "out": str(out)}
    write_json(resolved, out / "resolved_config.json")
    return 0


def _cmd_eval_direct(cfg: dict, args) -> int:
    allowed = {"est_gamma", "truth_gamma", "est_beta", "truth_beta", "est_f",
               "truth_f", "ci_lower", "ci_upper", "alpha", "out"}
    _check_keys(cfg, allowed, "eval config")
    est = read_matrix_csv(_require(cfg, "est_gamma", "eval config"))
    truth = read_matrix_csv(_require(cfg, "truth_gamma", "eval config"))
    out = _out_dir(cfg, args)

    values: dict[str, float | None] = {c: None for c in EvalReport.COLUMNS}
    values["rmse_gamma"] = rmse_gamma(est, truth)
    values["auc"] = auc_support(np.abs(est), truth != 0.0)
    if "est_beta" in cfg and "truth_beta" in cfg:
        values["mse_beta"] = mse_vector(read_vector_csv(cfg["est_beta"]),
                                        read_vector_csv(cfg["truth_beta"]))
    if "est_f" in cfg and "truth_f" in cfg:
        values["mse_f"] = mse_vector(read_matrix_csv(cfg["est_f"]),
                                     read_matrix_csv(cfg["truth_f"]))
    if "ci_lower" in cfg and "ci_upper" in cfg:
        from .infer import CIMatrix
        from .metrics import coverage_stats
        cis = CIMatrix(lower=read_matrix_csv(cfg["ci_lower"]),
                       upper=read_matrix_csv(cfg["ci_upper"]),
                       alpha=float(cfg.get("alpha", 0.05)),
                       significant=np.zeros_like(truth, dtype=bool))
        covs = coverage_stats(cis, truth)
        values["avgcov_s"], values["avgcov_sc"] = covs[0], covs[1]
        values["avglen_s"], values["avglen_sc"] = covs[2], covs[3]

    header = "scenario,rep," + ",".join(EvalReport.COLUMNS)
    row = "direct,1," + ",".join(_float_cell(values[c]) for c in EvalReport.COLUMNS)
    (out / "eval_summary.csv").write_text(header + "\n" + row + "\n")
    write_json({k: v for k, v in cfg.items()}, out / "resolved_config.json")
    return 0


def cmd_eval(cfg: dict, args) -> int:
    if "scenario" in cfg:
        return _cmd_eval_scenario(cfg, args)
    return _cmd_eval_direct(cfg, args)


def cmd_prep(cfg: dict, args) -> int:
    _check_keys(cfg, {"events", "anchors", "pre_s", "post_s", "bin_width_s",
                      "trials", "min_mean_spikes", "out"}, "prep config")
    events = read_event_csv(_require(cfg, "events", "prep config"))
    anchors_cfg = _require(cfg, "anchors", "prep config")
    if not isinstance(anchors_cfg, dict) or not anchors_cfg:
        raise ConfigError("prep 'anchors' must map alignment names to anchor CSV paths")
    pre = float(cfg.get("pre_s", 0.2))
    post = float(cfg.get("post_s", 0.4))
    bin_width = float(cfg.get("bin_width_s", 0.001))
    l = int(cfg.get("trials", 60))
    min_mean = float(cfg.get("min_mean_spikes", 10.0))
    out = _out_dir(cfg, args)

    all_ids = sorted(set(events.neuron_id.tolist()))
    summary: dict[str, dict] = {}
    for name in sorted(anchors_cfg):
        table = read_anchor_csv(anchors_cfg[name])
        for side in ("left", "right"):
            key = f"{name}_{side}"
            anchor_times = table.anchors_for(side)
            if anchor_times.size == 0:
                summary[key] = {"skipped": f"no anchors with side={side}"}
                print(f"notice: {key}: no anchors with side={side}; panel not written",
                      file=sys.stderr)
                continue
            window = TrialWindow(anchors=anchor_times, pre=pre, post=post,
                                 bin_width=bin_width)
            panel = bin_events(events, window, neuron_ids=all_ids)
            panel = filter_trials(panel, l)
            panel, excluded = filter_neurons(panel, min_mean)
            write_panel_csv(panel, out / f"{key}_panel.csv")
            write_json({"excluded_neurons": excluded}, out / f"{key}_excluded.json")
            summary[key] = {
                "panel": f"{key}_panel.csv",
                "n_trials": panel.n_trials, "n_bins": panel.n_bins,
                "n_neurons": panel.n_neurons, "excluded_neurons": excluded,
                "dropped_events": panel.meta.get("dropped_events"),
                "clipped_spikes": panel.meta.get("clipped_spikes"),
            }
    write_json(summary, out / "prep_meta.json")
    resolved = {"events": str(cfg["events"]),
                "anchors": {k: str(v) for k, v in anchors_cfg.items()},
                "pre_s": pre, "post_s": post, "bin_width_s": bin_width,
                "trials": l, "min_mean_spikes": min_mean, "out": str(out)}
    write_json(resolved, out / "resolved_config.json")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikenets",
        description="Directed interaction networks from binary spike panels.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed=False, threads=False, lam=False, alpha=False, m=False):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output directory (overrides config)")
        if seed:
            p.add_argument("--seed", type=int, help="override config seed")
        if threads:
            p.add_argument("--threads", type=int, help="worker threads for per-neuron fits")
        if lam:
            p.add_argument("--lambda", dest="lam", type=float, help="fixed penalty level")
        if alpha:
            p.add_argument("--alpha", type=float, help="significance level")
        if m:
            p.add_argument("--m", type=int, help="basis function count (0 = no trend)")

    common(sub.add_parser("simulate", help="generate a synthetic panel plus ground truth"),
           seed=True)
    common(sub.add_parser("fit", help="fit the penalized model to a panel"),
           threads=True, lam=True, m=True)
    common(sub.add_parser("infer", help="confidence intervals and significance filtering"),
           alpha=True)
    common(sub.add_parser("eval", help="score estimates, or run Monte Carlo scenarios"),
           seed=True, threads=True, lam=True, alpha=True, m=True)
    common(sub.add_parser("prep", help="bin, align, and filter raw spike events"))
    return parser


_COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "infer": cmd_infer,
             "eval": cmd_eval, "prep": cmd_prep}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    for attr in ("seed", "threads", "lam", "alpha", "m"):
        if not hasattr(args, attr):
            setattr(args, attr, None)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
