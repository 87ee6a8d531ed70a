"""Config-driven command line for the whole pipeline.

Four subcommands cover the experiment lifecycle:

``synth-gen``
    materialize a synthetic environment suite as CSV files plus a manifest
``oracle-check``
    compare closed-form regression coefficients against fresh OLS fits
``run``
    train every requested (architecture x mode) combination over replicate
    seeds, writing per-architecture report and curve CSVs, checkpoints, and
    an aligned-text summary
``eval``
    score a saved checkpoint on a suite and report per-environment metrics

All commands share the flags ``--config <path>`` (JSON, schema version 1),
``--out <dir>``, ``--seed <u64>`` (master seed override), and repeatable
``--set key=value`` overrides with dotted keys. Outputs carry no timestamps,
so identical configs and seeds reproduce identical bytes. Exit codes are a
stable contract: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from . import __version__
from .exceptions import ConfigError, IngestError, InvarcastError
from .ingest import fill_missing, load_csv, partition_environments
from .models import load_checkpoint, save_checkpoint
from .oracle import oracle_check_rows
from .semgen import (
    DEFAULT_TEMPORAL_LENGTH,
    EnvironmentSpec,
    SemConfig,
    env_type_suite,
    generate_env_suite,
    write_series_csv,
)
from .training import (
    SuiteData,
    TrainConfig,
    _prepare_suite_windows,
    evaluate_windows,
    run_replicates,
    suite_from_env_specs,
    suite_from_series_lists,
    write_curve_csv,
    write_report_csv,
)

__all__ = ["main", "load_config", "DEFAULT_CONFIG"]

SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "suite": {"env_type": "2"},
    "train": {},
    "architectures": ["recurrent", "transformer"],
    "modes": ["erm", "irm"],
    "n_seeds": 5,
}


# ---------------------------------------------------------------------------
# Config plumbing


def load_config(path=None) -> dict:
    """Defaults, optionally overlaid with a JSON config file."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        version = loaded.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {version!r}; this build reads {SCHEMA_VERSION}"
            )
        # A config that names its own suite replaces the default one whole;
        # merging "envs" into {"env_type": "2"} would create two sources.
        for key, value in loaded.items():
            config[key] = value
    return config


def apply_overrides(config: dict, overrides) -> dict:
    """Apply repeatable ``--set key=value`` pairs with dotted keys.

    Values parse as JSON when possible (numbers, booleans, lists) and fall
    back to plain strings, so ``--set train.epochs=3`` and
    ``--set suite.env_type=3-1B`` both do the obvious thing.
    """
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part!r} is not a section")
        node[parts[-1]] = value
    return config


def _suite_source(suite_cfg: dict) -> str:
    if not isinstance(suite_cfg, dict):
        raise ConfigError(f"'suite' must be an object, got {type(suite_cfg).__name__}")
    sources = [k for k in ("env_type", "envs", "real") if k in suite_cfg]
    if len(sources) != 1:
        raise ConfigError(
            f"suite must name exactly one data source out of env_type, envs, real; got {sources}"
        )
    return sources[0]


def _synthetic_specs(suite_cfg: dict, master_seed: int) -> list[EnvironmentSpec]:
    source = _suite_source(suite_cfg)
    seed = int(suite_cfg.get("seed", master_seed))
    if source == "env_type":
        # --set parses values as JSON, so the preset "2" may arrive as an int.
        return env_type_suite(
            str(suite_cfg["env_type"]),
            length=suite_cfg.get("length"),
            seed=seed,
            mode=suite_cfg.get("mode", "temporal"),
        )
    if source == "envs":
        specs = []
        for entry in suite_cfg["envs"]:
            if "env_id" not in entry or "sigma2" not in entry:
                raise ConfigError(f"explicit env needs env_id and sigma2: {entry}")
            specs.append(EnvironmentSpec(
                env_id=str(entry["env_id"]),
                config=SemConfig(
                    sigma2=float(entry["sigma2"]),
                    length=int(entry.get("length", DEFAULT_TEMPORAL_LENGTH)),
                    seed=int(entry.get("seed", seed)),
                    mode=entry.get("mode", "temporal"),
                ),
                role=entry.get("role", "train"),
            ))
        return specs
    raise ConfigError("suite uses real data; this command needs a synthetic suite")


def _real_suite(real_cfg: dict) -> SuiteData:
    for key in ("csv", "train_envs", "test_envs"):
        if key not in real_cfg:
            raise ConfigError(f"suite.real needs {key!r}")
    stations = load_csv(real_cfg["csv"])
    segments = []
    for station in stations:
        segments.extend(fill_missing(
            station,
            max_gap_hours=int(real_cfg.get("max_gap_hours", 6)),
            min_length=int(real_cfg.get("min_length", 1)),
        ))
    groups = partition_environments(segments, real_cfg.get("grouping", "by_station"))
    return suite_from_series_lists(groups, real_cfg["train_envs"], real_cfg["test_envs"])


def build_suite(config: dict) -> SuiteData:
    suite_cfg = config["suite"]
    if _suite_source(suite_cfg) == "real":
        return _real_suite(suite_cfg["real"])
    return suite_from_env_specs(_synthetic_specs(suite_cfg, _master_seed(config)))


def _master_seed(config: dict) -> int:
    return int(config.get("train", {}).get("seed", 0))


_RESERVED_TRAIN_KEYS = ("architecture", "mode")


def build_train_config(config: dict, architecture: str, mode: str) -> TrainConfig:
    train_cfg = dict(config.get("train", {}))
    for key in _RESERVED_TRAIN_KEYS:
        if key in train_cfg:
            raise ConfigError(
                f"train.{key} is chosen by the 'architectures'/'modes' lists; remove it"
            )
    unknown = set(train_cfg) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    return TrainConfig(architecture=architecture, mode=mode, **train_cfg)


def _out_dir(args, required: bool = True) -> Path | None:
    if args.out is None:
        if required:
            raise ConfigError("this command needs --out <dir>")
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> dict:
    config = load_config(args.config)
    apply_overrides(config, args.overrides)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError(f"--seed must be a u64, got {args.seed}")
        config.setdefault("train", {})["seed"] = args.seed
    return config


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth_gen(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    specs = _synthetic_specs(config["suite"], _master_seed(config))
    samples = generate_env_suite(specs)
    manifest = ["env_id,sigma2,length,mode,seed,role"]
    for spec in specs:
        path = out / f"{spec.env_id}.csv"
        write_series_csv(samples[spec.env_id], path)
        cfg = spec.config
        manifest.append(
            f"{spec.env_id},{cfg.sigma2!r},{cfg.length},{cfg.mode},{cfg.seed},{spec.role}"
        )
        print(f"wrote {path}")
    manifest_path = out / "manifest.csv"
    manifest_path.write_text("\n".join(manifest) + "\n")
    print(f"wrote {manifest_path}")
    return 0


def cmd_oracle_check(args) -> int:
    config = _load(args)
    out = _out_dir(args, required=False)
    rows, ok = oracle_check_rows(seed=_master_seed(config))
    header = f"{'regression':<12}{'coeff':<8}{'sigma2':>8}{'expected':>12}{'fitted':>12}{'gap':>10}  ok"
    print(header)
    print("-" * len(header))
    lines = ["regression,coefficient,sigma2,expected,fitted,abs_gap,within_tol"]
    for r in rows:
        print(f"{r['regression']:<12}{r['coefficient']:<8}{r['sigma2']:>8.2f}"
              f"{r['expected']:>12.6f}{r['fitted']:>12.6f}{r['abs_gap']:>10.6f}"
              f"  {'yes' if r['within_tol'] else 'NO'}")
        lines.append(
            f"{r['regression']},{r['coefficient']},{r['sigma2']!r},"
            f"{r['expected']!r},{r['fitted']!r},{r['abs_gap']!r},{r['within_tol']}"
        )
    if out is not None:
        (out / "oracle_check.csv").write_text("\n".join(lines) + "\n")
    print("all coefficients within tolerance" if ok else "TOLERANCE BREACH", file=sys.stderr)
    return 0 if ok else 1


def _summary_text(reports, test_envs, n_seeds: int) -> str:
    lines = [
        f"environment metrics over {n_seeds} seed(s), mean +/- std, normalized units",
        "",
        f"{'architecture':<14}{'mode':<6}{'env_id':<12}{'role':<7}"
        f"{'mse':>22}{'mae':>22}",
    ]
    for report in reports:
        by_env: dict[str, dict[str, tuple[float, float]]] = {}
        for row in report.rows:
            by_env.setdefault(row.env_id, {})[row.metric] = (row.mean, row.std)
        for env_id, metrics in sorted(by_env.items()):
            cells = {
                m: f"{metrics[m][0]:.4f} +/- {metrics[m][1]:.4f}"
                for m in ("mse", "mae")
            }
            role = "test" if env_id in test_envs else "train"
            lines.append(
                f"{report.architecture:<14}{report.mode:<6}{env_id:<12}{role:<7}"
                f"{cells['mse']:>22}{cells['mae']:>22}"
            )
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    suite = build_suite(config)
    architectures = list(config["architectures"])
    modes = list(config["modes"])
    n_seeds = int(config["n_seeds"])
    if not architectures or not modes:
        raise ConfigError("'architectures' and 'modes' must be non-empty lists")

    test_envs = set(suite.test_series)
    all_reports = []
    for architecture in architectures:
        arch_reports = []
        for mode in modes:
            train_config = build_train_config(config, architecture, mode)
            report = run_replicates(train_config, suite, n_seeds=n_seeds)
            arch_reports.append(report)
            all_reports.append(report)

            example = report.example_result
            save_checkpoint(out / f"checkpoint_{architecture}_{mode}.bin",
                            example.model_config, example.params)
            # Flush after every combination so an abort keeps partial results.
            write_report_csv(arch_reports, out / f"report_{architecture}.csv")
            write_curve_csv(arch_reports, out / f"curve_{architecture}.csv")
            (out / "summary.txt").write_text(
                _summary_text(all_reports, test_envs, n_seeds))

            finals = ", ".join(
                f"{env} mse {report.row(env, 'mse').mean:.4f}"
                for env in sorted(test_envs)
            ) or "no test env"
            print(f"[run] {architecture}/{mode} done over {n_seeds} seed(s): {finals}")

    summary = _summary_text(all_reports, test_envs, n_seeds)
    print()
    print(summary, end="")
    return 0


def cmd_eval(args) -> int:
    config = _load(args)
    out = _out_dir(args, required=False)
    eval_cfg = config.get("eval", {})
    if "checkpoint" not in eval_cfg:
        raise ConfigError("eval needs eval.checkpoint in the config (or --set eval.checkpoint=...)")

    model_config, params = load_checkpoint(eval_cfg["checkpoint"])
    suite = build_suite(config)
    train_cfg = dict(config.get("train", {}))
    train_cfg["horizon"] = model_config.horizon
    probe = build_train_config({**config, "train": train_cfg},
                               _architecture_of(model_config), "erm")
    _, train_windows, test_windows = _prepare_suite_windows(probe, suite)

    sample = next(iter(train_windows.values()))[0]
    if sample.inputs.shape[0] != model_config.input_dim:
        raise ConfigError(
            f"checkpoint expects {model_config.input_dim} variables, "
            f"suite provides {sample.inputs.shape[0]}"
        )

    lines = ["env_id,role,metric,value"]
    print(f"{'env_id':<12}{'role':<7}{'mse':>14}{'mae':>14}")
    for role, windows in (("train", train_windows), ("test", test_windows)):
        for env_id, wins in sorted(windows.items()):
            if not wins:
                continue
            env_mse, env_mae = evaluate_windows(params, model_config, wins)
            print(f"{env_id:<12}{role:<7}{env_mse:>14.6f}{env_mae:>14.6f}")
            lines.append(f"{env_id},{role},mse,{env_mse!r}")
            lines.append(f"{env_id},{role},mae,{env_mae!r}")
    if out is not None:
        (out / "eval_report.csv").write_text("\n".join(lines) + "\n")
    return 0


def _architecture_of(model_config) -> str:
    return "recurrent" if hasattr(model_config, "hidden_size") else "transformer"


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invarcast",
        description="Invariance-regularized multi-environment forecasting experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "synth-gen": (cmd_synth_gen, "Generate synthetic environment CSVs plus a manifest."),
        "oracle-check": (cmd_oracle_check, "Closed-form vs empirical regression coefficients."),
        "run": (cmd_run, "Train and evaluate every requested architecture/mode pair."),
        "eval": (cmd_eval, "Score a saved checkpoint on a data suite."),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None,
                       help="JSON experiment config (schema version 1)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (dotted path)")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvarcastError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
