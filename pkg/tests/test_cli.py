import json

import numpy as np
import pytest

from survcontrast.cli import main

BASE_SPEC = {
    "synthetic": {"kind": "paired_exponential", "n_samples": 160, "seed": 3},
    "variants": ["nll+snce"],
    "seeds": [0, 1, 2],
    "model": {"hidden_dim": 8, "depth": 2, "embedding_dim": 4},
    "train": {
        "epochs": 2,
        "batch_size": 32,
        "beta": 1.0,
        "sigma": 0.75,
        "nu": 0.5,
        "corruption_rate": 0.3,
        "patience": 5,
    },
    "n_bins": 10,
}


def write_spec(tmp_path, **changes):
    spec = json.loads(json.dumps(BASE_SPEC))
    for key, value in changes.items():
        if isinstance(value, dict):
            spec.setdefault(key, {}).update(value)
        else:
            spec[key] = value
    spec["out"] = str(tmp_path / "out")
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


def test_train_fans_out_checkpoints_and_logs(tmp_path):
    spec = write_spec(tmp_path)
    assert main(["train", "--config", str(spec)]) == 0
    out = tmp_path / "out"
    assert len(list((out / "checkpoints").glob("*.json"))) == 3
    assert len(list((out / "logs").glob("*.csv"))) == 3


def test_train_rerun_byte_identical(tmp_path):
    spec = write_spec(tmp_path, seeds=[0])
    assert main(["train", "--config", str(spec)]) == 0
    out = tmp_path / "out"
    ckpt = next((out / "checkpoints").glob("*.json"))
    log = next((out / "logs").glob("*.csv"))
    first = (ckpt.read_bytes(), log.read_bytes())
    assert main(["train", "--config", str(spec)]) == 0
    assert (ckpt.read_bytes(), log.read_bytes()) == first


def test_invalid_sigma_exits_2(tmp_path, capsys):
    spec = write_spec(tmp_path, train={"sigma": -1.0})
    assert main(["train", "--config", str(spec)]) == 2
    assert "sigma" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_divergence_exits_3(tmp_path, capsys):
    # a vanishing ranking temperature overflows exp() on the first wrongly
    # ordered pair, which must surface as a runtime (not config) failure
    spec = write_spec(
        tmp_path,
        variants=["nll+rank"],
        seeds=[0],
        train={"epochs": 2, "ranking_kappa": 1e-6},
    )
    with np.errstate(over="ignore", invalid="ignore"):  # inf/NaN is the point
        assert main(["train", "--config", str(spec)]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_evaluate_reports_and_summary(tmp_path):
    spec = write_spec(tmp_path)
    assert main(["train", "--config", str(spec)]) == 0
    assert main(["evaluate", "--config", str(spec)]) == 0
    out = tmp_path / "out"
    reports = sorted((out / "reports").glob("nll_snce_seed*.json"))
    assert len(reports) == 3
    payload = json.loads(reports[0].read_text())
    assert {"ci_integrated", "ibs", "ddc", "dcal_pvalue"} <= payload.keys()

    summary = (out / "reports" / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("label,n_seeds,ci_mean")
    row = summary[1].split(",")
    assert row[0] == "nll+snce" and row[1] == "3"
    # aggregate mean equals the average of the per-seed reports
    cis = [json.loads(p.read_text())["ci_integrated"] for p in reports]
    assert float(row[2]) == pytest.approx(np.mean(cis), abs=1e-10)
    assert int(row[8]) <= 3


def test_evaluate_missing_checkpoint_exits_2(tmp_path, capsys):
    spec = write_spec(tmp_path)
    assert main(["evaluate", "--config", str(spec)]) == 2
    assert "missing checkpoint" in capsys.readouterr().err


def test_evaluate_single_seed_zero_std(tmp_path):
    spec = write_spec(tmp_path, seeds=[1])
    assert main(["train", "--config", str(spec)]) == 0
    assert main(["evaluate", "--config", str(spec)]) == 0
    summary = (tmp_path / "out" / "reports" / "summary.csv").read_text().splitlines()
    row = summary[1].split(",")
    assert float(row[3]) == 0.0  # ci_std


def test_evaluate_rerun_byte_identical(tmp_path):
    spec = write_spec(tmp_path, seeds=[0, 1])
    assert main(["train", "--config", str(spec)]) == 0
    assert main(["evaluate", "--config", str(spec)]) == 0
    summary_path = tmp_path / "out" / "reports" / "summary.csv"
    first = summary_path.read_bytes()
    assert main(["evaluate", "--config", str(spec)]) == 0
    assert summary_path.read_bytes() == first


def test_ablate_emits_four_variant_rows(tmp_path):
    spec = write_spec(tmp_path, seeds=[0], train={"epochs": 1})
    assert main(["ablate", "--config", str(spec)]) == 0
    summary = (tmp_path / "out" / "reports" / "summary.csv").read_text().splitlines()
    labels = [line.split(",")[0] for line in summary[1:]]
    assert labels == ["nll", "nll+nce", "nll+rank", "nll+snce"]


def test_sweep_rows_match_values(tmp_path):
    spec = write_spec(tmp_path, seeds=[0], train={"epochs": 1})
    assert main(["sweep", "--config", str(spec), "--param", "beta", "--values", "0.1,1.0"]) == 0
    sweep = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in sweep[1:]] == ["beta=0.1", "beta=1"]


def test_sweep_alpha_rows(tmp_path):
    spec = write_spec(tmp_path, seeds=[0], train={"epochs": 1})
    assert main(["sweep", "--config", str(spec), "--param", "alpha", "--values", "0,2"]) == 0
    sweep = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert len(sweep) == 3


def test_sweep_alpha_percentile_mode(tmp_path):
    spec = write_spec(tmp_path, seeds=[0], train={"epochs": 1, "alpha_percentile": 10.0})
    assert main(["sweep", "--config", str(spec), "--param", "alpha", "--values", "0,10"]) == 0
    sweep = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in sweep[1:]] == ["alpha=0", "alpha=10"]


def test_sweep_empty_values_exits_2(tmp_path, capsys):
    spec = write_spec(tmp_path, seeds=[0])
    assert main(["sweep", "--config", str(spec), "--param", "beta", "--values", ""]) == 2


def test_subgroup_on_binary_feature(tmp_path):
    # append a synthetic binary column by using the oracle generator's raw
    # features and a custom csv with a binary flag
    rng = np.random.default_rng(0)
    n = 200
    x = rng.uniform(size=(n, 3))
    flag = rng.integers(0, 2, size=n)
    times = rng.uniform(1, 30, size=n)
    events = rng.integers(0, 2, size=n)
    csv_path = tmp_path / "data.csv"
    with open(csv_path, "w") as fh:
        fh.write("x0,x1,x2,flag,time,event\n")
        for i in range(n):
            fh.write(f"{x[i,0]},{x[i,1]},{x[i,2]},{flag[i]},{times[i]},{events[i]}\n")
    schema_path = tmp_path / "schema.json"
    schema_path.write_text(
        json.dumps(
            {
                "columns": [
                    {"name": "x0", "kind": "real", "role": "feature"},
                    {"name": "x1", "kind": "real", "role": "feature"},
                    {"name": "x2", "kind": "real", "role": "feature"},
                    {"name": "flag", "kind": "binary", "role": "feature"},
                    {"name": "time", "kind": "real", "role": "time"},
                    {"name": "event", "kind": "binary", "role": "event"},
                ]
            }
        )
    )
    spec = {
        "dataset": {"csv": str(csv_path), "schema": str(schema_path), "n_bins": 8},
        "variants": ["nll"],
        "seeds": [0],
        "model": {"hidden_dim": 8, "depth": 2, "embedding_dim": 4},
        "train": {"epochs": 1, "batch_size": 32, "patience": 3},
        "out": str(tmp_path / "out"),
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    assert main(["train", "--config", str(spec_path)]) == 0
    assert main(["subgroup", "--config", str(spec_path), "--feature", "flag"]) == 0
    dist = (tmp_path / "out" / "subgroup_distances.csv").read_text().splitlines()
    assert dist[0] == "subgroup,n,wasserstein"
    assert len(dist) == 3  # flag=0 and flag=1
    curves = (tmp_path / "out" / "subgroup_curves.csv").read_text().splitlines()
    assert len(curves) == 1 + 2 * 8


def test_synth_command_writes_dataset(tmp_path):
    assert main(["synth", "--kind", "paired-exponential", "--n", "50", "--seed", "4",
                 "--truth", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "synth.csv").exists()
    assert (tmp_path / "synth_truth.csv").exists()
    schema = json.loads((tmp_path / "schema.json").read_text())
    assert len(schema["columns"]) == 6


def test_synth_oracle_kind(tmp_path):
    assert main(["synth", "--kind", "discrete-oracle", "--n", "30", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "synth.csv").read_text().splitlines()
    assert len(lines) == 31


def test_margin_study_command(tmp_path, capsys):
    assert main(["margin-study", "--n", "300", "--seed", "1", "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out
    assert "truth_dominates=" in printed
    pairs = (tmp_path / "margin_pairs.csv").read_text().splitlines()
    assert pairs[0] == "anchor_tau,censoring_gap,truth_gap"
    assert len(pairs) > 1


def test_out_root_env_variable(tmp_path, monkeypatch):
    monkeypatch.setenv("SURVCONTRAST_OUT", str(tmp_path / "root"))
    spec = write_spec(tmp_path, seeds=[0], train={"epochs": 1})
    raw = json.loads(spec.read_text())
    raw["out"] = "nested/exp"
    spec.write_text(json.dumps(raw))
    assert main(["train", "--config", str(spec)]) == 0
    assert (tmp_path / "root" / "nested" / "exp" / "checkpoints").exists()


def test_spec_seed_override(tmp_path):
    spec = write_spec(tmp_path, train={"epochs": 1})
    assert main(["train", "--config", str(spec), "--seed", "7"]) == 0
    out = tmp_path / "out"
    assert (out / "checkpoints" / "nll_snce_seed7.json").exists()
    assert len(list((out / "checkpoints").glob("*.json"))) == 1


def test_spec_requires_one_data_source(tmp_path, capsys):
    spec = write_spec(tmp_path)
    raw = json.loads(spec.read_text())
    raw["dataset"] = {"csv": "x.csv", "schema": "s.json"}
    spec.write_text(json.dumps(raw))
    assert main(["train", "--config", str(spec)]) == 2


def test_toml_spec(tmp_path):
    toml = f"""
variants = ["nll"]
seeds = [0]
n_bins = 8
out = "{tmp_path / 'out_toml'}"

[synthetic]
kind = "paired_exponential"
n_samples = 120
seed = 2

[model]
hidden_dim = 8
depth = 2
embedding_dim = 4

[train]
epochs = 1
batch_size = 32
patience = 3
"""
    path = tmp_path / "spec.toml"
    path.write_text(toml)
    assert main(["train", "--config", str(path)]) == 0
    assert (tmp_path / "out_toml" / "checkpoints" / "nll_seed0.json").exists()
