"""Experiment harness.

Commands:

* ``train``      train (variant x seed) runs, writing checkpoints and logs
* ``evaluate``   test-split metric reports plus a mean/std aggregate
* ``ablate``     the four loss variants side by side
* ``subgroup``   per-subgroup mean survival curves vs Kaplan-Meier
* ``sweep``      sensitivity table over the margin or the balance weight
* ``synth``      write a synthetic dataset (CSV + schema, optional truths)
* ``margin-study`` censoring-gap vs ground-truth-gap pair table

Experiment specs are JSON or TOML files; every flag mirrors a spec field
and ``--seed/--variant/--out`` override it. Outputs are plain CSV/JSON with
stable formatting, so identical specs reproduce identical bytes. Exit codes:
0 success, 2 configuration error, 3 runtime divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    try:
        import tomli as tomllib
    except ModuleNotFoundError:
        tomllib = None

import numpy as np

from . import metrics as M
from .data import DataError, PreparedData, RawDataset, Schema, load_csv, prepare
from .model import HazardModel, ModelConfig, init_model, survival_from_hazard
from .synth import (
    SynthConfig,
    generate_discrete_oracle,
    generate_paired_exponential,
    margin_study,
)
from .trainer import VARIANTS, TrainConfig, TrainingDiverged, train_variant

OUT_ROOT_ENV = "SURVCONTRAST_OUT"
DEFAULT_SEEDS = list(range(10))


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    dataset: dict | None = None  # {"csv": ..., "schema": ..., "n_bins": ...}
    synthetic: dict | None = None  # SynthConfig fields
    variants: list[str] = field(default_factory=lambda: ["nll+snce"])
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    n_bins: int | None = None
    out: str = "runs/experiment"

    def __post_init__(self):
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("spec needs exactly one of 'dataset' or 'synthetic'")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        kw = dict(self.train)
        kw.update(overrides)
        kw["seed"] = seed
        try:
            return TrainConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train config: {exc}") from exc

    def model_config(self, input_dim: int, n_time_bins: int) -> ModelConfig:
        try:
            return ModelConfig(input_dim=input_dim, n_time_bins=n_time_bins, **self.model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model config: {exc}") from exc


def load_spec(path, overrides: dict | None = None) -> ExperimentSpec:
    path = Path(path)
    if path.suffix == ".toml" and tomllib is None:
        raise ConfigError("TOML specs need python >= 3.11 or the tomli package; use JSON instead")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        else:
            with open(path) as fh:
                raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        return ExperimentSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad spec field: {exc}") from exc


def resolve_out(spec_out: str, flag_out: str | None) -> Path:
    out = flag_out or spec_out
    root = os.environ.get(OUT_ROOT_ENV)
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def load_raw(spec: ExperimentSpec) -> RawDataset:
    if spec.dataset is not None:
        try:
            schema = Schema.from_json(spec.dataset["schema"])
            return load_csv(spec.dataset["csv"], schema)
        except KeyError as exc:
            raise ConfigError(f"dataset spec needs 'csv' and 'schema': missing {exc}") from exc
        except (DataError, FileNotFoundError) as exc:
            raise ConfigError(str(exc)) from exc
    kw = dict(spec.synthetic)
    kind = kw.get("kind", "paired_exponential")
    try:
        cfg = SynthConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic config: {exc}") from exc
    if kind == "discrete_oracle":
        return generate_discrete_oracle(cfg).to_raw()
    return generate_paired_exponential(cfg).to_raw()


def spec_n_bins(spec: ExperimentSpec) -> int | None:
    if spec.n_bins is not None:
        return spec.n_bins
    if spec.dataset is not None:
        return spec.dataset.get("n_bins")
    return None


def prepare_for_seed(raw: RawDataset, spec: ExperimentSpec, seed: int) -> PreparedData:
    return prepare(raw, seed=seed, n_bins=spec_n_bins(spec))


# ---------------------------------------------------------------------------
# run naming
# ---------------------------------------------------------------------------

def run_name(variant: str, seed: int) -> str:
    return f"{variant.replace('+', '_')}_seed{seed}"


def checkpoint_path(out: Path, variant: str, seed: int) -> Path:
    return out / "checkpoints" / f"{run_name(variant, seed)}.json"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def run_one(raw, spec: ExperimentSpec, variant: str, seed: int, out: Path, **train_overrides):
    data = prepare_for_seed(raw, spec, seed)
    model = init_model(spec.model_config(data.n_features, data.n_time_bins), seed)
    config = spec.train_config(seed, **train_overrides)
    model, log = train_variant(data, model, config, variant)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    model.save(checkpoint_path(out, variant, seed))
    log.to_csv(out / "logs" / f"{run_name(variant, seed)}.csv")
    return data, model, log


def cmd_train(args) -> int:
    spec = load_spec(args.config, spec_overrides(args))
    out = resolve_out(spec.out, args.out)
    raw = load_raw(spec)
    for variant in spec.variants:
        for seed in spec.seeds:
            run_one(raw, spec, variant, seed, out)
            print(f"trained {run_name(variant, seed)}")
    return 0


def evaluate_run(raw, spec: ExperimentSpec, variant: str, seed: int, out: Path) -> M.MetricReport:
    path = checkpoint_path(out, variant, seed)
    if not path.exists():
        raise ConfigError(f"missing checkpoint: {path}")
    model = HazardModel.load(path)
    data = prepare_for_seed(raw, spec, seed)
    x, tau, delta = data.subset(data.split.test)
    return M.evaluate_hazards(model.hazard_curve(x), tau, delta)


def aggregate_reports(reports: list[M.MetricReport]) -> dict:
    def mean_std(values):
        arr = np.asarray(values, dtype=float)
        return float(arr.mean()), float(arr.std())

    ci = mean_std([r.ci_integrated for r in reports])
    ibs_ = mean_std([r.ibs for r in reports])
    ddc_ = mean_std([r.ddc for r in reports])
    return {
        "n_seeds": len(reports),
        "ci_mean": ci[0],
        "ci_std": ci[1],
        "ibs_mean": ibs_[0],
        "ibs_std": ibs_[1],
        "ddc_mean": ddc_[0],
        "ddc_std": ddc_[1],
        "dcal_passes": sum(r.dcal_pass for r in reports),
    }


AGG_COLUMNS = ["ci_mean", "ci_std", "ibs_mean", "ibs_std", "ddc_mean", "ddc_std", "dcal_passes"]


def write_summary(path: Path, rows: list[tuple[str, dict]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("label,n_seeds," + ",".join(AGG_COLUMNS) + "\n")
        for label, agg in rows:
            cells = [label, str(agg["n_seeds"])] + [
                format(agg[c], ".12g") if isinstance(agg[c], float) else str(agg[c]) for c in AGG_COLUMNS
            ]
            fh.write(",".join(cells) + "\n")


def evaluate_variants(raw, spec: ExperimentSpec, out: Path) -> list[tuple[str, dict]]:
    (out / "reports").mkdir(parents=True, exist_ok=True)
    summary = []
    for variant in spec.variants:
        reports = []
        for seed in spec.seeds:
            report = evaluate_run(raw, spec, variant, seed, out)
            report.to_json(out / "reports" / f"{run_name(variant, seed)}.json")
            reports.append(report)
        summary.append((variant, aggregate_reports(reports)))
    write_summary(out / "reports" / "summary.csv", summary)
    return summary


def cmd_evaluate(args) -> int:
    spec = load_spec(args.config, spec_overrides(args))
    out = resolve_out(spec.out, args.out)
    raw = load_raw(spec)
    for variant, agg in evaluate_variants(raw, spec, out):
        print(f"{variant}: ci={agg['ci_mean']:.4f}±{agg['ci_std']:.4f} ibs={agg['ibs_mean']:.4f}±{agg['ibs_std']:.4f} "
              f"ddc={agg['ddc_mean']:.4f}±{agg['ddc_std']:.4f} dcal={agg['dcal_passes']}/{agg['n_seeds']}")
    return 0


def cmd_ablate(args) -> int:
    spec = load_spec(args.config, spec_overrides(args))
    spec.variants = list(VARIANTS)
    out = resolve_out(spec.out, args.out)
    raw = load_raw(spec)
    for variant in spec.variants:
        for seed in spec.seeds:
            run_one(raw, spec, variant, seed, out)
    for variant, agg in evaluate_variants(raw, spec, out):
        print(f"{variant}: ci={agg['ci_mean']:.4f} ibs={agg['ibs_mean']:.4f} "
              f"ddc={agg['ddc_mean']:.4f} dcal={agg['dcal_passes']}/{agg['n_seeds']}")
    return 0


def cmd_subgroup(args) -> int:
    spec = load_spec(args.config, spec_overrides(args))
    out = resolve_out(spec.out, args.out)
    raw = load_raw(spec)
    seed = spec.seeds[0] if args.seed is None else args.seed[0]
    variant = spec.variants[0]
    path = checkpoint_path(out, variant, seed)
    if not path.exists():
        raise ConfigError(f"missing checkpoint: {path} (run train first)")
    model = HazardModel.load(path)
    data = prepare_for_seed(raw, spec, seed)

    groups = subgroup_columns(data.feature_names, args.feature)
    if not groups:
        raise ConfigError(f"feature {args.feature!r} not found or not binary/categorical")
    idx = data.split.test
    x, tau, delta = data.subset(idx)
    surv = survival_from_hazard(model.hazard_curve(x))

    curve_rows = []
    dist_rows = []
    for label, column in groups:
        for level in (0, 1) if len(groups) == 1 else (1,):
            members = np.flatnonzero(np.isclose(x[:, column], level) if len(groups) == 1 else x[:, column] > 0.5)
            name = f"{label}={level}" if len(groups) == 1 else label
            if members.size < 5:
                print(f"warning: subgroup {name} has {members.size} samples, skipped", file=sys.stderr)
                continue
            km = M.kaplan_meier(tau[members], delta[members], n_bins=data.n_time_bins)
            mean_curve = surv[members].mean(axis=0)
            distance = M.wasserstein_to_km(mean_curve, km)
            dist_rows.append((name, members.size, distance))
            for t in range(data.n_time_bins):
                curve_rows.append((name, t, mean_curve[t], km.values[t]))

    with open(out / "subgroup_curves.csv", "w") as fh:
        fh.write("subgroup,t,model_mean,kaplan_meier\n")
        for name, t, mv, kv in curve_rows:
            fh.write(f"{name},{t},{format(mv, '.12g')},{format(kv, '.12g')}\n")
    with open(out / "subgroup_distances.csv", "w") as fh:
        fh.write("subgroup,n,wasserstein\n")
        for name, n, d in dist_rows:
            fh.write(f"{name},{n},{format(d, '.12g')}\n")
    for name, n, d in dist_rows:
        print(f"{name}: n={n} wasserstein={d:.4f}")
    return 0


def subgroup_columns(feature_names: list[str], feature: str) -> list[tuple[str, int]]:
    """Binary feature -> one column; categorical -> one column per level."""
    if feature in feature_names:
        return [(feature, feature_names.index(feature))]
    return [(name, j) for j, name in enumerate(feature_names) if name.startswith(f"{feature}=")]


def cmd_sweep(args) -> int:
    spec = load_spec(args.config, spec_overrides(args))
    out = resolve_out(spec.out, args.out)
    raw = load_raw(spec)
    values = [float(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise ConfigError("sweep needs a non-empty --values list")
    variant = spec.variants[0]
    percentile_mode = spec.train.get("alpha_percentile") is not None

    rows = []
    for value in values:
        if args.param == "beta":
            overrides = {"beta": value}
        elif percentile_mode:
            overrides = {"alpha_percentile": value if value > 0 else None, "alpha": 0.0}
        else:
            overrides = {"alpha": value}
        reports = []
        for seed in spec.seeds:
            sub = out / f"{args.param}_{format(value, 'g')}"
            data, model, _ = run_one(raw, spec, variant, seed, sub, **overrides)
            x, tau, delta = data.subset(data.split.test)
            reports.append(M.evaluate_hazards(model.hazard_curve(x), tau, delta))
        rows.append((f"{args.param}={format(value, 'g')}", aggregate_reports(reports)))
    write_summary(out / "sweep.csv", rows)
    for label, agg in rows:
        print(f"{label}: ci={agg['ci_mean']:.4f} ibs={agg['ibs_mean']:.4f} "
              f"ddc={agg['ddc_mean']:.4f} dcal={agg['dcal_passes']}/{agg['n_seeds']}")
    return 0


def cmd_synth(args) -> int:
    out_dir = Path(args.out or os.environ.get(OUT_ROOT_ENV, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = args.kind.replace("-", "_")
    try:
        cfg = SynthConfig(n_samples=args.n, feature_dim=args.features, seed=args.seed, kind=kind)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if kind == "paired_exponential":
        data = generate_paired_exponential(cfg)
        data.write_csv(out_dir / "synth.csv")
        if args.truth:
            data.write_truth_csv(out_dir / "synth_truth.csv")
    else:
        oracle = generate_discrete_oracle(cfg)
        raw = oracle.to_raw()
        with open(out_dir / "synth.csv", "w") as fh:
            fh.write(",".join(raw.feature_names + ["time", "event"]) + "\n")
            for i in range(len(raw)):
                cells = [format(v, ".12g") for v in raw.features[i]]
                fh.write(",".join(cells + [format(raw.times[i], ".12g"), str(raw.events[i])]) + "\n")
    schema = {
        "columns": [{"name": f"x{i}", "kind": "real", "role": "feature"} for i in range(args.features)]
        + [
            {"name": "time", "kind": "real", "role": "time"},
            {"name": "event", "kind": "binary", "role": "event"},
        ]
    }
    with open(out_dir / "schema.json", "w") as fh:
        json.dump(schema, fh, indent=2, sort_keys=True)
    print(f"wrote {out_dir / 'synth.csv'}")
    return 0


def cmd_margin_study(args) -> int:
    out_dir = Path(args.out or os.environ.get(OUT_ROOT_ENV, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(n_samples=args.n, seed=args.seed)
    data = generate_paired_exponential(cfg)
    pairs = margin_study(data, n_bins=args.bins)
    with open(out_dir / "margin_pairs.csv", "w") as fh:
        fh.write("anchor_tau,censoring_gap,truth_gap\n")
        for row in pairs:
            fh.write(f"{row[0]},{row[1]},{row[2]}\n")
    if pairs.size:
        c_mean, t_mean = pairs[:, 1].mean(), pairs[:, 2].mean()
        frac = float((pairs[:, 2] >= pairs[:, 1]).mean())
        print(f"pairs={len(pairs)} censoring_gap_mean={c_mean:.3f} truth_gap_mean={t_mean:.3f} "
              f"truth_dominates={frac:.4f}")
    else:
        print("pairs=0")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def spec_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "seed", None):
        overrides["seeds"] = args.seed
    if getattr(args, "variant", None):
        overrides["variants"] = args.variant
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survcontrast", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_spec_flags(p):
        p.add_argument("--config", required=True, help="experiment spec (JSON or TOML)")
        p.add_argument("--seed", type=int, nargs="+", help="override spec seeds")
        p.add_argument("--variant", nargs="+", choices=VARIANTS, help="override spec variants")
        p.add_argument("--out", help=f"output directory (default from spec / ${OUT_ROOT_ENV})")

    for name, fn in (("train", cmd_train), ("evaluate", cmd_evaluate), ("ablate", cmd_ablate)):
        p = sub.add_parser(name)
        add_spec_flags(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("subgroup")
    add_spec_flags(p)
    p.add_argument("--feature", required=True, help="binary or categorical feature name")
    p.set_defaults(fn=cmd_subgroup)

    p = sub.add_parser("sweep")
    add_spec_flags(p)
    p.add_argument("--param", required=True, choices=["alpha", "beta"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("synth")
    p.add_argument("--kind", default="paired-exponential",
                   choices=["paired-exponential", "discrete-oracle"])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--features", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth", action="store_true", help="also write the hidden-truth sidecar")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("margin-study")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_margin_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
