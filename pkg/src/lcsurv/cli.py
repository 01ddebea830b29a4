"""Batch command surface: fit, select, cv, bootstrap, simulate, report.

All randomness flows from one base seed (flag > config file > LCSURV_SEED
environment variable > 0) through derived streams, so every command is
byte-reproducible given the same inputs. Flags override config-file values.
Structured results are JSON, tabular/plot data CSV; every output carries a
schema-version field (CSV files as a leading ``# schema_version=...``
comment line). Quantiles everywhere use linear interpolation between order
statistics (type-7).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit or
evaluation failure. Errors are emitted as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ColumnSchema, Dataset, load_csv, summarize
from .errors import (
    ConfigError,
    DataError,
    LcsurvError,
    MissingArtifacts,
)
from .evaluation import ValidationSummary, bootstrap_validate, cross_validate, risk_scores, time_dependent_auc
from .mixture import LatentClassFit, fit_latent_class
from .selection import class_sweep, fit_statistics
from .simulation import StudyResult, default_scenario, run_study, scenario_from_json

SCHEMA_VERSION = "1"


@dataclass
class RunConfig:
    data: str | None = None
    x: tuple[str, ...] = ()
    z: tuple[str, ...] = ()
    time_column: str = "time"
    event_column: str = "event"
    g: int = 1
    g_max: int | None = None
    starts: int = 30
    seed: int = 0
    horizon: float | None = None
    k: int = 10
    bootstrap: int = 30
    threads: int = 1
    out: str = "out"


_CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__}


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(payload) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(payload)
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if "seed" not in values:
        env = os.environ.get("LCSURV_SEED")
        if env is not None:
            try:
                values["seed"] = int(env)
            except ValueError:
                raise ConfigError(f"LCSURV_SEED is not an integer: {env!r}") from None
    for key in ("x", "z"):
        if key in values and isinstance(values[key], str):
            values[key] = tuple(s.strip() for s in values[key].split(",") if s.strip())
        elif key in values:
            values[key] = tuple(values[key])
    config = RunConfig(**values)
    if config.g < 1:
        raise ConfigError("g must be at least 1")
    if config.threads < 1:
        raise ConfigError("threads must be at least 1")
    return config


def _load_data(config: RunConfig) -> Dataset:
    if not config.data:
        raise ConfigError("no data file given (use --data or the config file)")
    if not Path(config.data).exists():
        raise ConfigError(f"data file not found: {config.data}")
    if not config.x:
        raise ConfigError("no x covariates named (use --x or the config file)")
    schema = ColumnSchema(
        time=config.time_column,
        event=config.event_column,
        x=tuple(config.x),
        z=tuple(config.z),
    )
    return load_csv(config.data, schema)


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [f"# schema_version={SCHEMA_VERSION}", ",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- serializers -----------------------------------------------------------------


def _baseline_dict(baseline) -> dict:
    return {
        "times": [float(t) for t in baseline.times],
        "increments": [float(h) for h in baseline.increments],
    }


def _cox_dict(fit, x_names) -> dict:
    return {
        "beta": {name: float(b) for name, b in zip(x_names, fit.coef)},
        "baseline": _baseline_dict(fit.baseline),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "final_gradient_norm": float(fit.final_gradient_norm),
        "diagnostic": fit.diagnostic,
    }


def _membership_dict(params, z_names) -> dict:
    return {
        "gamma": [float(v) for v in params.intercepts],
        "delta": [[float(v) for v in row] for row in params.slopes],
        "z_names": list(z_names),
        "convention": "last class is the reference (gamma and delta pinned at 0)",
    }


def _latent_fit_dict(fit: LatentClassFit, ds: Dataset) -> dict:
    modal = np.argmax(fit.resp, axis=1)
    classes = []
    for i, model in enumerate(fit.class_models):
        members = np.flatnonzero(modal == i)
        summary = summarize(ds.subset(members)).as_dict() if members.size else None
        classes.append(
            {
                "index": i + 1,
                "pi_mean": float(fit.resp[:, i].mean()),
                "class_size_modal": int(members.size),
                "cox": _cox_dict(model, ds.x_names),
                "covariate_summary": summary,
            }
        )
    return {
        "g": fit.g,
        "loglik": float(fit.loglik),
        "n_params": fit.n_params,
        "classes": classes,
        "membership": _membership_dict(fit.membership, ds.z_names),
        "starts_summary": [
            {
                "seed": r.seed,
                "loglik": None if not np.isfinite(r.loglik) else float(r.loglik),
                "converged": r.converged,
                "message": r.message,
            }
            for r in fit.starts_summary
        ],
        "best_replicated": fit.best_replicated,
    }


def _validation_dict(summary: ValidationSummary) -> dict:
    return {
        "method": summary.method,
        "replicates": summary.replicates,
        "auc_values": list(summary.auc_values),
        "mean": summary.mean,
        "ci_low": summary.ci_low,
        "ci_high": summary.ci_high,
        "pooled": summary.pooled,
        "failures": [{"replicate": i, "message": m} for i, m in summary.failures],
    }


def _write_validation(out: Path, prefix: str, summary: ValidationSummary) -> None:
    _write_csv(
        out / f"{prefix}_replicates.csv",
        ["method", "replicate", "seed", "auc", "n_cases", "n_controls"],
        [
            [summary.method, r.replicate, r.seed, r.auc, r.n_cases, r.n_controls]
            for r in summary.rows
        ],
    )
    _write_json(out / f"{prefix}_summary.json", _validation_dict(summary))


# -- commands --------------------------------------------------------------------


def cmd_fit(config: RunConfig) -> int:
    ds = _load_data(config)
    fit = fit_latent_class(
        ds, config.g, n_starts=config.starts, base_seed=config.seed, threads=config.threads
    )
    stats = fit_statistics(fit.loglik, fit.n_params, ds.n)
    horizon = config.horizon if config.horizon is not None else float(np.median(ds.times))
    roc = time_dependent_auc(risk_scores(fit, ds, horizon), ds.times, ds.events, horizon)
    report = {
        "command": "fit",
        "n": ds.n,
        "seed": config.seed,
        "fit": _latent_fit_dict(fit, ds),
        "fit_statistics": {
            "neg2ll": stats.neg2ll,
            "n_params": stats.n_params,
            "n": stats.n,
            "aic": stats.aic,
            "bic": stats.bic,
            "abic": stats.abic,
        },
        "overall_summary": summarize(ds).as_dict(),
        "roc": {
            "horizon": roc.horizon,
            "auc": roc.auc,
            "points": [[fpr, tpr] for fpr, tpr in roc.points],
        },
    }
    _write_json(_out_dir(config) / "fit_report.json", report)
    return 0


def cmd_select(config: RunConfig) -> int:
    ds = _load_data(config)
    g_max = config.g_max if config.g_max is not None else config.g
    sweep = class_sweep(
        ds,
        config.g,
        g_max,
        n_starts=config.starts,
        base_seed=config.seed,
        threads=config.threads,
    )
    rows = []
    for e in sweep.entries:
        if e.stats is not None:
            rows.append(
                [e.g, e.stats.neg2ll, e.stats.n_params, e.stats.aic, e.stats.bic,
                 e.stats.abic, e.converged, e.best_replicated]
            )
        else:
            rows.append([e.g, "", "", "", "", "", e.converged, e.best_replicated])
    out = _out_dir(config)
    _write_csv(
        out / "sweep.csv",
        ["g", "neg2ll", "n_params", "aic", "bic", "abic", "converged", "best_replicated"],
        rows,
    )
    _write_json(
        out / "selection.json",
        {
            "command": "select",
            "recommended_g": sweep.recommended_g,
            "entries": [
                {
                    "g": e.g,
                    "converged": e.converged,
                    "best_replicated": e.best_replicated,
                    "error": e.error,
                    "stats": None
                    if e.stats is None
                    else {
                        "neg2ll": e.stats.neg2ll,
                        "n_params": e.stats.n_params,
                        "aic": e.stats.aic,
                        "bic": e.stats.bic,
                        "abic": e.stats.abic,
                    },
                }
                for e in sweep.entries
            ],
        },
    )
    return 0


def cmd_cv(config: RunConfig) -> int:
    ds = _load_data(config)
    summary = cross_validate(
        ds,
        config.k,
        config.g,
        horizon=config.horizon,
        n_starts=config.starts,
        base_seed=config.seed,
        threads=config.threads,
    )
    _write_validation(_out_dir(config), "cv", summary)
    return 0


def cmd_bootstrap(config: RunConfig) -> int:
    ds = _load_data(config)
    summary = bootstrap_validate(
        ds,
        config.bootstrap,
        config.g,
        horizon=config.horizon,
        n_starts=config.starts,
        base_seed=config.seed,
        threads=config.threads,
    )
    _write_validation(_out_dir(config), "bootstrap", summary)
    return 0


def _study_dict(result: StudyResult) -> dict:
    def model(s):
        return {
            "n": s.n,
            "mean": s.mean,
            "sd": s.sd,
            "median": s.median,
            "iqr": list(s.iqr),
        }

    wins = sum(
        1
        for r in result.rows
        if r.error is None and r.auc_two_class > r.auc_one_class
    )
    return {
        "command": "simulate",
        "one_class": model(result.one_class),
        "two_class": model(result.two_class),
        "two_class_wins": wins,
        "failures": [
            {"replicate": r.replicate, "message": r.error}
            for r in result.rows
            if r.error is not None
        ],
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.scenario:
        path = Path(args.scenario)
        if not path.exists():
            raise ConfigError(f"scenario file not found: {path}")
        try:
            scn = scenario_from_json(json.loads(path.read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario file: {exc}") from exc
    else:
        scn = default_scenario()
    from dataclasses import replace

    if args.replicates is not None:
        scn = replace(scn, replicates=args.replicates)
    if args.seed is not None:
        scn = replace(scn, base_seed=args.seed)
    if args.starts is not None:
        scn = replace(scn, n_starts=args.starts)
    if args.horizon is not None:
        scn = replace(scn, horizon=args.horizon)

    result = run_study(scn, threads=args.threads or 1)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "study.csv",
        ["replicate", "auc_one_class", "auc_two_class", "bic_one_class",
         "bic_two_class", "label_auc", "error"],
        [
            [r.replicate, r.auc_one_class, r.auc_two_class, r.bic_one_class,
             r.bic_two_class, r.label_auc, r.error or ""]
            for r in result.rows
        ],
    )
    _write_json(out / "study_summary.json", _study_dict(result))
    _write_csv(
        out / "study_kde.csv",
        ["auc", "density_one_class", "density_two_class"],
        [
            [g, d1, d2]
            for g, d1, d2 in zip(result.kde_grid, result.kde_one_class, result.kde_two_class)
        ],
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    if not run_dir.exists():
        raise MissingArtifacts(f"run directory not found: {run_dir}")
    lines: list[str] = ["lcsurv run report", ""]
    found = False

    fit_path = run_dir / "fit_report.json"
    if fit_path.exists():
        found = True
        payload = json.loads(fit_path.read_text())
        fit = payload["fit"]
        stats = payload["fit_statistics"]
        lines.append(f"Model fit: {fit['g']} class(es), n={payload['n']}")
        lines.append(
            f"  loglik={fit['loglik']:.4f}  N={fit['n_params']}  "
            f"AIC={stats['aic']:.2f}  BIC={stats['bic']:.2f}  aBIC={stats['abic']:.2f}"
        )
        for cls in fit["classes"]:
            lines.append(
                f"  class {cls['index']}: pi_mean={cls['pi_mean']:.4f} "
                f"modal_size={cls['class_size_modal']}"
            )
        roc = payload["roc"]
        lines.append(f"  apparent AUC at t*={roc['horizon']:.4f}: {roc['auc']:.4f}")
        _write_csv(
            run_dir / "roc_curves.csv",
            ["model", "fpr", "tpr"],
            [[f"g{fit['g']}", p[0], p[1]] for p in roc["points"]],
        )
        lines.append("  ROC points written to roc_curves.csv")
        lines.append("")

    select_path = run_dir / "selection.json"
    if select_path.exists():
        found = True
        payload = json.loads(select_path.read_text())
        lines.append(f"Class sweep: recommended g={payload['recommended_g']}")
        for e in payload["entries"]:
            if e["stats"] is not None:
                lines.append(
                    f"  g={e['g']}: BIC={e['stats']['bic']:.2f} "
                    f"converged={e['converged']}"
                )
            else:
                lines.append(f"  g={e['g']}: failed ({e['error']})")
        lines.append("")

    for prefix, label in (("cv", "Cross-validation"), ("bootstrap", "Bootstrap")):
        path = run_dir / f"{prefix}_summary.json"
        if path.exists():
            found = True
            payload = json.loads(path.read_text())
            pooled = " (pooled)" if payload.get("pooled") else ""
            lines.append(
                f"{label}: mean AUC {payload['mean']:.4f} "
                f"({payload['ci_low']:.4f}-{payload['ci_high']:.4f}) "
                f"over {payload['replicates']} replicates{pooled}"
            )
            lines.append("")

    study_path = run_dir / "study_summary.json"
    if study_path.exists():
        found = True
        payload = json.loads(study_path.read_text())
        one, two = payload["one_class"], payload["two_class"]
        lines.append("Simulation study:")
        lines.append(
            f"  one-class  mean AUC {one['mean']:.4f} (SD {one['sd']:.4f}), "
            f"median {one['median']:.4f} ({one['iqr'][0]:.4f}-{one['iqr'][1]:.4f})"
        )
        lines.append(
            f"  two-class  mean AUC {two['mean']:.4f} (SD {two['sd']:.4f}), "
            f"median {two['median']:.4f} ({two['iqr'][0]:.4f}-{two['iqr'][1]:.4f})"
        )
        lines.append(f"  two-class wins: {payload['two_class_wins']}/{one['n']}")
        kde_path = run_dir / "study_kde.csv"
        if kde_path.exists():
            (run_dir / "auc_density.csv").write_text(kde_path.read_text())
            lines.append("  AUC densities written to auc_density.csv")
        lines.append("")

    if not found:
        raise MissingArtifacts(
            f"no known artifacts in {run_dir} (looked for fit_report.json, "
            "selection.json, cv_summary.json, bootstrap_summary.json, study_summary.json)"
        )
    (run_dir / "report.txt").write_text("\n".join(lines) + "\n")
    return 0


# -- argument parsing --------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--data", help="input CSV (columns: time, event, covariates)")
    parser.add_argument("--x", help="comma-separated survival covariates")
    parser.add_argument("--z", help="comma-separated class-membership covariates")
    parser.add_argument("--g", type=int, help="number of latent classes")
    parser.add_argument("--starts", type=int, help="EM random starts (default 30)")
    parser.add_argument("--seed", type=int, help="base seed (fallback: LCSURV_SEED, then 0)")
    parser.add_argument("--horizon", type=float, help="AUC horizon (default: median follow-up)")
    parser.add_argument("--threads", type=int, help="worker threads (default 1)")
    parser.add_argument("--out", help="output directory (default ./out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcsurv",
        description="Latent-class Cox survival modelling. Quantiles use the "
        "type-7 rule (linear interpolation between order statistics).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a g-class model and write fit_report.json")
    _add_common(p_fit)

    p_select = sub.add_parser("select", help="sweep class counts, write sweep.csv")
    _add_common(p_select)
    p_select.add_argument("--g-max", type=int, dest="g_max", help="largest class count")

    p_cv = sub.add_parser("cv", help="k-fold cross-validated AUC")
    _add_common(p_cv)
    p_cv.add_argument("--k", type=int, help="number of folds (default 10)")

    p_boot = sub.add_parser("bootstrap", help="bootstrap-validated AUC")
    _add_common(p_boot)
    p_boot.add_argument("--bootstrap", type=int, help="number of resamples (default 30)")

    p_sim = sub.add_parser("simulate", help="run the replicate comparison study")
    p_sim.add_argument("--scenario", help="scenario JSON (default: built-in scenario)")
    p_sim.add_argument("--replicates", type=int, help="override replicate count")
    p_sim.add_argument("--starts", type=int, help="override per-replicate EM starts")
    p_sim.add_argument("--seed", type=int, help="override base seed")
    p_sim.add_argument("--horizon", type=float, help="override AUC horizon")
    p_sim.add_argument("--threads", type=int, help="worker threads (default 1)")
    p_sim.add_argument("--out", help="output directory (default ./out)")

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("--run", required=True, help="directory with prior outputs")
    return parser


def _emit_error(exc: Exception, code: int) -> int:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "report":
            return cmd_report(args)
        config = _resolve_config(args)
        command = {
            "fit": cmd_fit,
            "select": cmd_select,
            "cv": cmd_cv,
            "bootstrap": cmd_bootstrap,
        }[args.command]
        return command(config)
    except ConfigError as exc:
        return _emit_error(exc, 2)
    except (DataError, MissingArtifacts) as exc:
        return _emit_error(exc, 3)
    except (LcsurvError, ValueError) as exc:
        return _emit_error(exc, 4)


if __name__ == "__main__":
    sys.exit(main())
