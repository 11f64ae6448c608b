"""Command-line front end: simulate, sweep and bounds subcommands.

Configs are JSON with typed sections; unknown keys are rejected.  Output is
CSV (RFC-4180, '.' decimal, UTF-8, '#'-prefixed metadata comments) or JSON.
At a fixed seed, output bytes are independent of the worker count; wall-clock
timings are therefore only written when --timings is requested.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import io
import json
import math
import sys
import time

from . import __version__, bounds as bd
from .core import ProblemDims
from .detect import DetectorConfig, StopRule
from .measure import NoiseModel, NoiseSpec
from .sim import ChannelPrior, TrialConfig, evaluate_bounds, monte_carlo, sweep

__all__ = ["main", "load_config", "resolve_config", "PRESETS", "CSV_BASE_COLUMNS"]

CSV_BASE_COLUMNS = [
    "n", "u", "s", "k_u", "k_s", "m", "snr_db", "xi", "detector", "trials",
    "pmd", "pmd_lo", "pmd_hi", "pfa", "pfa_user", "pbe", "mse_mean",
]

DEFAULT_CONFIG = {
    "dims": {"n": 1024, "u": 8, "s": None, "k_u": 1, "k_s": 3, "m": 300},
    "detector": {
        "name": "hiiht",
        "max_iters": 50,
        "stop_rule": "support_fixed_point",
        "ls_tolerance": 1e-10,
        "ls_max_iters": 200,
        "residual_tolerance": 1e-8,
    },
    "noise": {"model": "measurement", "snr_db": 0.0},
    "channel": {"sigma_h2": 1.0, "exact_sparsity": True, "power_profile": None},
    "signatures": {"randomize_phases": True},
    "xi": {"policy": "auto", "value": None},
    "run": {"trials": 1000, "seed": 1, "workers": 1},
    "sweep": {"mode": "cartesian"},
    "bounds": {
        "which": [],
        "tau": None,
        "tau_trials": 1000,
        "epsilon": 0.05,
        "rip_prefactor": 1.0,
        "rip_rate": 0.1,
        "conc_scale": 1.0,
    },
    "output": {"path": None, "format": "csv", "timings": False},
}

_SNR_GRID = [-20.0, -17.5, -15.0, -12.5, -10.0, -7.5, -5.0, -2.5, 0.0]
_M_GRID = [20, 40, 60, 80, 100, 120, 160, 200, 240, 300]


def _fig_pmd(u: int, k_s: int) -> dict:
    return {
        "dims": {"u": u, "k_s": k_s},
        "noise": {"snr_db": _SNR_GRID[0]},
        "sweep": {"snr_db": list(_SNR_GRID), "k_u": [1, 2, 4]},
    }


PRESETS = {
    # MSE against the measurement count; the u axes share one figure.
    "fig1": {
        "dims": {"k_u": 2, "k_s": 3},
        "noise": {"snr_db": -10.0},
        "sweep": {"u": [4, 8, 16], "m": list(_M_GRID)},
    },
    "fig2": _fig_pmd(4, 3),
    "fig3": _fig_pmd(8, 3),
    "fig4": _fig_pmd(16, 3),
    "fig5": _fig_pmd(4, 6),
    "fig6": _fig_pmd(8, 6),
    "fig7": _fig_pmd(16, 6),
}
PRESETS["fig8"] = copy.deepcopy(PRESETS["fig1"])


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if key == "sweep":
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = {**out[key], **copy.deepcopy(value)}  # grid axes are free keys
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_sweep_keys(section: dict):
    allowed = {"mode", "snr_db", "m", "u", "s", "k_u", "k_s"}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")


def load_config(path: str | None, preset: str | None, overrides: dict) -> dict:
    """Resolve defaults <- preset <- config file <- CLI overrides, strictly."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        config = _merge(config, PRESETS[preset])
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        config = _merge(config, user)
    config = _merge(config, overrides)
    _check_sweep_keys(config["sweep"])
    return config


def resolve_config(config: dict) -> TrialConfig:
    """Build the validated trial configuration from a resolved config dict."""
    dims_cfg = config["dims"]
    u = dims_cfg["u"]
    s = dims_cfg["s"] if dims_cfg["s"] is not None else dims_cfg["n"] // u
    dims = ProblemDims(
        n=dims_cfg["n"], u=u, s=s, k_u=dims_cfg["k_u"], k_s=dims_cfg["k_s"], m=dims_cfg["m"]
    )
    noise_cfg = config["noise"]
    snr_db = float(noise_cfg["snr_db"])
    noise = NoiseSpec(sigma2=10 ** (-snr_db / 10.0), model=NoiseModel(noise_cfg["model"]))
    channel = config["channel"]
    prior = ChannelPrior(
        dims=dims,
        sigma_h2=channel["sigma_h2"],
        exact_sparsity=channel["exact_sparsity"],
        power_profile=tuple(channel["power_profile"]) if channel["power_profile"] else None,
    )
    det = config["detector"]
    xi = _resolve_xi(config, snr_db)
    det_cfg = DetectorConfig(
        max_iters=det["max_iters"],
        stop_rule=StopRule(det["stop_rule"]),
        ls_tolerance=det["ls_tolerance"],
        ls_max_iters=det["ls_max_iters"],
        residual_tolerance=det["residual_tolerance"],
        xi=xi,
    )
    return TrialConfig(
        dims=dims,
        noise=noise,
        detector=det["name"],
        prior=prior,
        detector_cfg=det_cfg,
        randomize_phases=config["signatures"]["randomize_phases"],
    )


def _resolve_xi(config: dict, snr_db: float) -> float:
    policy = config["xi"]["policy"]
    if policy == "zero":
        return 0.0
    if policy == "value":
        value = config["xi"]["value"]
        if value is None:
            raise ConfigError("xi.policy 'value' requires xi.value")
        return float(value)
    if policy == "auto":
        if config["channel"]["exact_sparsity"]:
            return 0.0
        if "snr_db" in config["sweep"]:
            raise ConfigError(
                "xi.policy 'auto' with inexact sparsity cannot follow an SNR sweep; "
                "set an explicit xi.value"
            )
        return 10 ** (-snr_db / 10.0)
    raise ConfigError(f"unknown xi policy {policy!r}")


def _config_hash(config: dict) -> str:
    science = {k: v for k, v in config.items() if k != "output"}
    science["run"] = {k: v for k, v in config["run"].items() if k != "workers"}
    blob = json.dumps(science, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _summary_row(summary, timings: bool, runtime_s: float | None) -> dict:
    d = summary.config.dims
    row = {
        "n": d.n, "u": d.u, "s": d.s, "k_u": d.k_u, "k_s": d.k_s, "m": d.m,
        "snr_db": summary.config.snr_db,
        "xi": summary.config.detector_cfg.xi,
        "detector": summary.config.detector,
        "trials": summary.trials,
        "pmd": summary.pmd, "pmd_lo": summary.pmd_lo, "pmd_hi": summary.pmd_hi,
        "pfa": summary.pfa, "pfa_user": summary.pfa_user,
        "pbe": summary.pbe,
        "mse_mean": summary.mse_mean,
    }
    row.update(summary.bounds)
    row["runtime_s"] = runtime_s if timings else None
    return row


def _write_rows(rows: list[dict], config: dict, out_path: str | None, fmt: str):
    meta = {
        "seed": config["run"]["seed"],
        "version": f"hierdet {__version__}",
        "config_hash": _config_hash(config),
    }
    bound_cols = sorted({k for row in rows for k in row if k.startswith("bound_") or k == "tau"})
    columns = CSV_BASE_COLUMNS + bound_cols + ["runtime_s"]
    if fmt == "csv":
        buf = io.StringIO()
        for key, value in meta.items():
            buf.write(f"# {key}={value}\n")
        buf.write(",".join(columns) + "\n")
        for row in rows:
            buf.write(",".join(_fmt(row.get(col)) for col in columns) + "\n")
        text = buf.getvalue()
    else:
        payload = {**meta, "rows": [{c: row.get(c) for c in columns} for row in rows]}
        text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json_default(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    raise TypeError(f"not JSON serializable: {value!r}")


def _bound_kwargs(config: dict) -> dict:
    b = config["bounds"]
    return {
        "tau": b["tau"],
        "tau_trials": b["tau_trials"],
        "epsilon": b["epsilon"],
        "rip_prefactor": b["rip_prefactor"],
        "rip_rate": b["rip_rate"],
        "conc_scale": b["conc_scale"],
    }


def cmd_simulate(config: dict) -> int:
    trial_config = resolve_config(config)
    run = config["run"]
    started = time.perf_counter()
    summary = monte_carlo(trial_config, run["trials"], run["seed"], workers=run["workers"])
    kinds = tuple(config["bounds"]["which"])
    if kinds:
        summary.bounds = evaluate_bounds(
            trial_config, kinds, seed=run["seed"], workers=run["workers"], **_bound_kwargs(config)
        )
    runtime = time.perf_counter() - started
    out = config["output"]
    row = _summary_row(summary, out["timings"], runtime)
    _write_rows([row], config, out["path"], out["format"])
    return 0


def cmd_sweep(config: dict) -> int:
    trial_config = resolve_config(config)
    run = config["run"]
    grid = {k: v for k, v in config["sweep"].items() if k != "mode" and v}
    if not grid:
        raise ConfigError("sweep requires a non-empty grid (snr_db/m/u/s/k_u/k_s lists)")
    started = time.perf_counter()
    summaries = sweep(
        trial_config,
        grid,
        trials=run["trials"],
        seed=run["seed"],
        mode=config["sweep"]["mode"],
        workers=run["workers"],
        bound_kinds=tuple(config["bounds"]["which"]),
        bound_kwargs=_bound_kwargs(config),
    )
    runtime = time.perf_counter() - started
    out = config["output"]
    rows = [_summary_row(s, out["timings"], runtime) for s in summaries]
    _write_rows(rows, config, out["path"], out["format"])
    return 0


def cmd_bounds(config: dict, which: list[str]) -> int:
    """Evaluate requested bound reports and constants; emit as JSON."""
    trial_config = resolve_config(config)
    d = trial_config.dims
    snr = trial_config.noise.snr
    b = config["bounds"]
    tau = b["tau"]
    if tau is None and any(k in ("recovery", "concentration", "false_alarm", "rate") for k in which):
        from .sim import calibrate_tau

        tau = calibrate_tau(
            trial_config, trials=b["tau_trials"], seed=config["run"]["seed"],
            workers=config["run"]["workers"],
        )
    report: dict = {"dims": vars(d).copy(), "snr_db": trial_config.snr_db, "tau": tau}
    params = None
    if tau is not None:
        params = bd.BoundParams(
            dims=d, snr=snr, tau=tau, xi=trial_config.detector_cfg.xi,
            epsilon=b["epsilon"], rip_prefactor=b["rip_prefactor"],
            rip_rate=b["rip_rate"], conc_scale=b["conc_scale"],
        )
    for kind in which:
        if kind == "recovery":
            report[kind] = _report_dict(bd.missed_detection_bound_recovery(params))
        elif kind == "concentration":
            report[kind] = _report_dict(bd.missed_detection_bound_concentration(params))
        elif kind == "false_alarm":
            report[kind] = _report_dict(bd.false_alarm_bound(params))
        elif kind == "correlator":
            report[kind] = {
                "log_bound": bd.correlator_missed_detection_log_bound(d.s, d.u, d.k_s, d.n, snr)
            }
        elif kind == "rip":
            if params is None:
                params = bd.BoundParams(
                    dims=d, snr=snr, tau=1.0, xi=trial_config.detector_cfg.xi,
                    epsilon=b["epsilon"], rip_prefactor=b["rip_prefactor"],
                    rip_rate=b["rip_rate"], conc_scale=b["conc_scale"],
                )
            report[kind] = {"value": bd.rip_failure_bound(params)}
        elif kind == "rate":
            report[kind] = {
                "nats": bd.rate_lower_bound(d.k_s, snr, tau, d.m, d.n, 1.0 / snr),
                "bits": bd.rate_lower_bound(d.k_s, snr, tau, d.m, d.n, 1.0 / snr, units="bits"),
            }
        elif kind == "threshold_constant":
            report[kind] = {"value": bd.threshold_miss_constant(d.m, d.k_s)}
        elif kind == "correlator_constant":
            report[kind] = {"value": bd.correlator_miss_constant(d.s, d.u, d.k_s)}
        elif kind == "sufficient_m":
            report[kind] = {
                "recovery": bd.sufficient_measurements(d, "recovery"),
                "concentration": bd.sufficient_measurements(d, "concentration"),
            }
        else:
            raise ConfigError(f"unknown bound request {kind!r}")
    text = json.dumps(report, sort_keys=True, indent=2, default=_json_default) + "\n"
    out = config["output"]
    if out["path"]:
        with open(out["path"], "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _report_dict(report: bd.BoundReport) -> dict:
    return {
        "terms": report.terms,
        "total": report.total,
        "clipped": report.clipped,
        "flags": report.flags,
    }


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierdet",
        description="Hierarchical-sparse multiuser detection simulator and bound evaluator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (
        ("simulate", "one Monte Carlo configuration, one output row"),
        ("sweep", "Monte Carlo over a parameter grid"),
        ("bounds", "evaluate closed-form bounds and constants"),
    ):
        p = sub.add_parser(name, help=descr)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", help=f"named preset: {', '.join(sorted(PRESETS))}")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--trials", type=int, help="trials per grid cell")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), help="output format")
        p.add_argument("--timings", action="store_true", help="record wall-clock runtime_s")
        p.add_argument(
            "--bounds",
            help="comma list of analytic overlays: recovery,concentration,correlator",
        )
        if name == "bounds":
            p.add_argument(
                "--which",
                default="recovery,concentration,correlator,false_alarm",
                help="comma list of reports (recovery, concentration, correlator, "
                "false_alarm, rip, rate, threshold_constant, correlator_constant, sufficient_m)",
            )
            p.add_argument("--tau", type=float, help="noise enhancement (skip calibration)")
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.trials is not None:
        run["trials"] = args.trials
    if args.workers is not None:
        run["workers"] = args.workers
    if run:
        overrides["run"] = run
    output = {}
    if args.out is not None:
        output["path"] = args.out
    if args.format is not None:
        output["format"] = args.format
    if args.timings:
        output["timings"] = True
    if output:
        overrides["output"] = output
    bounds = {}
    if args.bounds is not None:
        bounds["which"] = [k for k in args.bounds.split(",") if k]
    if getattr(args, "tau", None) is not None:
        bounds["tau"] = args.tau
    if bounds:
        overrides["bounds"] = bounds
    return overrides


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.preset, _overrides_from_args(args))
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "sweep":
            return cmd_sweep(config)
        which = [k for k in args.which.split(",") if k]
        return cmd_bounds(config, which)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
