"""Command-line experiment runner.

Subcommands: ``evaluate`` (one seeded run), ``sweep`` (error scaling over a
grid of sample sizes), ``confidence`` (bound coverage over seeds),
``diagnose`` (population profile and mismatch terms), and ``hard-instance``
(perturbed-pair likelihood experiment).  Configuration is a JSON document
with a versioned ``"schema": 1`` key; outputs are JSON reports and RFC-4180
CSV files with 17-significant-digit floats, byte-identical for identical
(config, seed) pairs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (the error
class name is printed on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, hard_instances, uncertainty
from .errors import InvalidInput, OpeLabError
from .estimators import cme_value, discounted_value, fit_embeddings
from .features import load_features
from .instances import Instance, build_builtin
from .mdp import (
    exact_policy_value,
    discounted_exact_value,
    load_initial_distribution,
    load_mdp,
    load_policy,
    sample_episodes,
)


class ConfigError(Exception):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _load_config(path: str) -> dict:
    try:
        config = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if config.get("schema") != 1:
        raise ConfigError("config must declare \"schema\": 1")
    return config


def _load_instance(config: dict) -> Instance:
    spec = config.get("instance")
    if not isinstance(spec, dict):
        raise ConfigError("config needs an 'instance' object")
    if "builtin" in spec:
        return build_builtin(spec)
    if "files" in spec:
        files = spec["files"]
        model = load_mdp(files["mdp"])
        return Instance(
            model=model,
            behavior=load_policy(files["behavior"]),
            behavior_init=load_initial_distribution(files["behavior_init"]),
            target=load_policy(files["target"]),
            target_init=load_initial_distribution(files["target_init"]),
            features=load_features(files["features"], model.n_states, model.n_actions),
        )
    raise ConfigError("instance must name a 'builtin' or provide 'files'")


def _estimator_settings(config: dict) -> dict:
    settings = config.get("estimator", {})
    lam = float(settings.get("lambda", 1.0))
    delta = float(settings.get("delta", 0.1))
    if lam < 0.0:
        raise ConfigError("estimator.lambda must be nonnegative")
    if not 0.0 < delta < 1.0:
        raise ConfigError("estimator.delta must lie in (0, 1)")
    return {
        "lambda": lam,
        "horizon": settings.get("horizon"),
        "gamma": settings.get("gamma"),
        "delta": delta,
        "omega": settings.get("omega"),
    }


def _data_settings(config: dict) -> tuple[int, int]:
    data = config.get("data", {})
    episodes = int(data.get("episodes", 100))
    horizon = int(data.get("horizon", 4))
    if episodes < 0 or horizon < 1:
        raise ConfigError("data.episodes must be >= 0 and data.horizon >= 1")
    return episodes, horizon


def _seed_settings(config: dict) -> tuple[int, int]:
    seeds = config.get("seeds", {})
    return int(seeds.get("count", 1)), int(seeds.get("base", 0))


def _resolve_omega(instance: Instance, settings: dict) -> float:
    if settings["omega"] is not None:
        return float(settings["omega"])
    return uncertainty.default_omega(instance.features).value


def _true_value(instance: Instance, horizon: int, gamma) -> float:
    if gamma is not None:
        return discounted_exact_value(instance.model, instance.target, instance.target_init, gamma)
    return exact_policy_value(instance.model, instance.target, instance.target_init, horizon)


def _single_run(instance: Instance, settings: dict, episodes: int, data_horizon: int, seed: int):
    """One seeded simulate/fit/estimate/bound pass; returns a report dict."""
    dataset = sample_episodes(
        instance.model, instance.behavior, instance.behavior_init, episodes, data_horizon, seed
    )
    fit = fit_embeddings(
        dataset, instance.features, instance.target, settings["lambda"], instance.target_init
    )
    gamma = settings["gamma"]
    horizon = int(settings["horizon"]) if settings["horizon"] is not None else data_horizon
    spectral = None
    if gamma is not None:
        estimate = discounted_value(fit, float(gamma))
        v_hat = estimate.value
        spectral = estimate.spectral_radius
    else:
        v_hat = cme_value(fit, horizon).value
    bound = None
    if settings["lambda"] > 0.0 and fit.features.max_row_norm <= 1.0 + 1e-9:
        omega = _resolve_omega(instance, settings)
        if gamma is not None:
            bound = uncertainty.discounted_confidence_bound(
                fit, float(gamma), settings["delta"], omega
            ).bound
        else:
            bound = uncertainty.confidence_bound(fit, horizon, settings["delta"], omega).bound
    v_true = _true_value(instance, horizon, gamma)
    return {
        "v_hat": v_hat,
        "lambda": settings["lambda"],
        "H": horizon,
        "gamma": gamma,
        "spectral_radius": spectral,
        "n": dataset.n_samples,
        "bound": bound,
        "v_true": v_true,
        "abs_error": abs(v_hat - v_true),
        "seed": seed,
    }


def run_evaluate(config: dict, out_dir: Path, seed: int | None) -> int:
    instance = _load_instance(config)
    settings = _estimator_settings(config)
    episodes, horizon = _data_settings(config)
    _, base_seed = _seed_settings(config)
    report = _single_run(
        instance, settings, episodes, horizon, seed if seed is not None else base_seed
    )
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return 0


def run_sweep(config: dict, out_dir: Path, threads: int) -> int:
    instance = _load_instance(config)
    settings = _estimator_settings(config)
    _, horizon = _data_settings(config)
    count, base = _seed_settings(config)
    grid = config.get("sweep", {}).get("n_grid")
    if not grid:
        raise ConfigError("sweep needs a nonempty sweep.n_grid list")
    header = ["n", "seed", "v_hat", "v_true", "abs_error", "bound", "covered"]
    rows_path = out_dir / "sweep.csv"
    summary = []
    with open(rows_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for n in grid:
            n = int(n)
            if n % horizon != 0:
                raise ConfigError(f"grid value {n} is not divisible by the horizon {horizon}")
            episodes = n // horizon

            def job(seed: int):
                return _single_run(instance, settings, episodes, horizon, seed)

            seeds = [base + i for i in range(count)]
            with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
                reports = list(pool.map(job, seeds))
            reports.sort(key=lambda r: r["seed"])
            errors, bounds, covered = [], [], []
            for report in reports:
                cover = (
                    report["abs_error"] <= report["bound"] if report["bound"] is not None else None
                )
                writer.writerow(
                    [
                        _fmt(v)
                        for v in (
                            n, report["seed"], report["v_hat"], report["v_true"],
                            report["abs_error"], report["bound"], cover,
                        )
                    ]
                )
                errors.append(report["abs_error"])
                if report["bound"] is not None:
                    bounds.append(report["bound"])
                    covered.append(cover)
            handle.flush()
            summary.append(
                [
                    n,
                    float(np.sqrt(np.mean(np.square(errors)))),
                    float(np.mean(bounds)) if bounds else None,
                    float(np.mean(covered)) if covered else None,
                ]
            )
    _write_csv(out_dir / "sweep_summary.csv", ["n", "rmse", "mean_bound", "coverage"], summary)
    return 0


def run_confidence(config: dict, out_dir: Path, threads: int) -> int:
    instance = _load_instance(config)
    settings = _estimator_settings(config)
    episodes, horizon = _data_settings(config)
    count, base = _seed_settings(config)

    def job(seed: int):
        return _single_run(instance, settings, episodes, horizon, seed)

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        reports = sorted(pool.map(job, [base + i for i in range(count)]), key=lambda r: r["seed"])
    rows = [
        [r["seed"], r["v_true"], r["v_hat"], r["bound"],
         None if r["bound"] is None else r["abs_error"] <= r["bound"]]
        for r in reports
    ]
    _write_csv(out_dir / "coverage.csv", ["seed", "v_true", "v_hat", "bound", "covered"], rows)

    # Full bound decomposition for the base seed, for inspection.
    dataset = sample_episodes(
        instance.model, instance.behavior, instance.behavior_init, episodes, horizon, base
    )
    fit = fit_embeddings(
        dataset, instance.features, instance.target, settings["lambda"], instance.target_init
    )
    omega = _resolve_omega(instance, settings)
    eval_horizon = int(settings["horizon"]) if settings["horizon"] is not None else horizon
    if settings["gamma"] is not None:
        report = uncertainty.discounted_confidence_bound(
            fit, float(settings["gamma"]), settings["delta"], omega
        )
    else:
        report = uncertainty.confidence_bound(fit, eval_horizon, settings["delta"], omega)
    (out_dir / "confidence.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True)
    )
    return 0


def run_diagnose(config: dict, out_dir: Path) -> int:
    instance = _load_instance(config)
    _, horizon = _data_settings(config)
    settings = _estimator_settings(config)
    horizon = int(settings["horizon"]) if settings["horizon"] is not None else horizon
    profile = diagnostics.population_profile(
        instance.model, instance.behavior, instance.behavior_init,
        instance.target, instance.target_init, instance.features, horizon,
    )
    (out_dir / "profile.json").write_text(json.dumps(profile.to_dict(), indent=2, sort_keys=True))
    terms = diagnostics.mismatch_terms(profile, horizon)
    _write_csv(
        out_dir / "mismatch.csv",
        ["h", "mismatch_per_h"],
        [[h, terms.per_h[h]] for h in range(horizon + 1)],
    )
    return 0


def run_hard_instance(config: dict, out_dir: Path, threads: int) -> int:
    instance = _load_instance(config)
    episodes, horizon = _data_settings(config)
    count, base = _seed_settings(config)
    perturbation = config.get("perturbation", {})
    x_scale = float(perturbation.get("x_scale", 1.0))
    n_samples = episodes * horizon

    profile = diagnostics.population_profile(
        instance.model, instance.behavior, instance.behavior_init,
        instance.target, instance.target_init, instance.features, horizon,
    )
    spec = hard_instances.perturbation_spec(
        instance.model, instance.behavior, instance.target, horizon
    )
    if x_scale == 0.0:
        direction = np.zeros(instance.features.dim)
    else:
        direction = x_scale * hard_instances.optimal_perturbation_direction(
            profile, spec, n_samples, horizon
        )
    spec = spec.with_direction(direction)
    perturbed = hard_instances.perturb_instance(
        instance.model, instance.behavior, instance.features, spec
    )
    v_base = exact_policy_value(instance.model, instance.target, instance.target_init, horizon)
    v_pert = exact_policy_value(perturbed, instance.target, instance.target_init, horizon)
    gap = v_base - v_pert

    def gap_radius(model) -> float:
        nu = diagnostics.feature_expectations(
            model, instance.target, instance.target_init, instance.features, horizon - 1
        )
        weights = np.arange(horizon, 0, -1, dtype=float)
        aggregate = weights @ nu
        prof = diagnostics.population_profile(
            model, instance.behavior, instance.behavior_init,
            instance.target, instance.target_init, instance.features, horizon,
        )
        norm = float(np.sqrt(max(aggregate @ prof.sigma_inv(aggregate), 0.0)))
        return float(np.sqrt(spec.c) / (24.0 * np.sqrt(n_samples)) * norm)

    rho = gap_radius(instance.model)
    rho_tilde = gap_radius(perturbed)

    def job(seed: int):
        dataset = sample_episodes(
            instance.model, instance.behavior, instance.behavior_init, episodes, horizon, seed
        )
        ratio = hard_instances.likelihood_ratio(dataset, instance.model, perturbed)
        return [seed, n_samples, ratio.log_ratio, ratio.ratio >= 0.5, gap, rho, rho_tilde]

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        rows = sorted(pool.map(job, [base + i for i in range(count)]), key=lambda r: r[0])
    _write_csv(
        out_dir / "hard_instance.csv",
        ["seed", "N", "log_ratio", "ratio_ge_half", "v_gap", "rho", "rho_tilde"],
        rows,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ope-lab", description="Off-policy evaluation experiments on finite MDPs."
    )
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory (default: config 'out' or '.')")
    parser.add_argument("--seed", type=int, default=None, help="override the base seed")
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("OPE_LAB_THREADS", "1")),
        help="worker threads for seed sweeps (default: OPE_LAB_THREADS or 1)",
    )
    parser.add_argument(
        "command",
        choices=["evaluate", "sweep", "confidence", "diagnose", "hard-instance"],
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        out_dir = Path(args.out or config.get("out", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.seed is not None:
            config.setdefault("seeds", {})["base"] = args.seed
        if args.command == "evaluate":
            return run_evaluate(config, out_dir, args.seed)
        if args.command == "sweep":
            return run_sweep(config, out_dir, args.threads)
        if args.command == "confidence":
            return run_confidence(config, out_dir, args.threads)
        if args.command == "diagnose":
            return run_diagnose(config, out_dir)
        return run_hard_instance(config, out_dir, args.threads)
    except (ConfigError, InvalidInput) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OpeLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
