import json
import re

import numpy as np
import pytest

from bongard import harness
from bongard.agents import Policy
from bongard.bp_model import load_bp
from bongard.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_DATA, main
from bongard.errors import ConfigError, InconsistentRuns
from bongard.nn import OptimizerState
from bongard.synth import concept_predicate, parse_concept
from bongard.training import CSV_COLUMNS, MetricsRow, MetricsWriter, RunConfig, read_metrics, train_seed

from conftest import noise_bp


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["generate", "--count", "4", "--seed", "1", "--out", str(root)]) == 0
    return root


def test_generate_layout_and_sidecars(dataset):
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert [e["id"] for e in manifest["problems"]] == [0, 1, 2, 3]
    for e in manifest["problems"]:
        bp = load_bp(dataset / e["dir"])
        assert bp.id == e["id"]
        side = json.loads((dataset / e["dir"] / "concept.json").read_text())
        assert set(side) == {"factors", "k", "scenes"} and side["k"] == 1 and len(side["scenes"]) == 12
    bps = harness.load_dataset(dataset)
    for bp in bps:
        flags = [concept_predicate(bp.concept, s) for s in bp.scenes]
        assert flags == [True] * 6 + [False] * 6


def test_generate_single_concept_and_byte_identical(tmp_path):
    args = ["generate", "--concept", "fill", "--count", "3", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    bps = harness.load_dataset(tmp_path / "a")
    assert all(bp.concept == parse_concept("fill") for bp in bps)


def test_generate_count_zero(tmp_path):
    assert main(["generate", "--count", "0", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["problems"] == []


def test_data_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BONGARD_DATA", str(tmp_path / "env"))
    assert main(["generate", "--count", "1"]) == 0
    assert (tmp_path / "env" / "manifest.json").is_file()


def test_generate_bad_concept_is_config_error(tmp_path):
    assert main(["generate", "--concept", "colour", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_default_split_holds_out_concepts():
    entries = [{"id": k, "concept": c} for k, c in enumerate("abcdefgh")]
    train, evals = harness.default_split({"problems": entries})
    assert evals == [3, 7] and not set(train) & set(evals)
    same = [{"id": k, "concept": "a"} for k in range(3)]
    assert harness.default_split({"problems": same}) == ([0, 1, 2], [0, 1, 2])


def test_run_config_precedence(tmp_path):
    from bongard.cli import build_parser, resolve_run_config
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"episodes": 30, "lr": 0.01, "encoder": "mlp"}))
    args = build_parser().parse_args(["train", "--config", str(cfg), "--episodes", "12"])
    rc = resolve_run_config(args)
    assert (rc.episodes, rc.lr, rc.encoder, rc.gamma) == (12, 0.01, "mlp", RunConfig().gamma)
    cfg.write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(ConfigError):
        resolve_run_config(build_parser().parse_args(["train", "--config", str(cfg)]))


def test_run_config_invariants():
    with pytest.raises(ConfigError):
        RunConfig(seeds=[])
    with pytest.raises(ConfigError):
        RunConfig(train_ids=[1, 2], eval_ids=[2, 3])
    with pytest.raises(ConfigError):
        RunConfig(encoder="cnn")


def test_train_eval_report_roundtrip(dataset, tmp_path):
    run = tmp_path / "runs" / "snn"
    rc = main(["train", "--data", str(dataset), "--out", str(run), "--episodes", "10",
               "--episode-length", "24", "--seeds", "2", "--train-ids", "0,1"])
    assert rc == 0
    for s in (0, 1):
        rows = read_metrics(run / f"seed{s}.csv")
        assert len(rows) == 10 and tuple(rows[0]) == CSV_COLUMNS
        ckpt = json.loads((run / f"seed{s}.ckpt.json").read_text())
        assert {"format_version", "policy", "optimizer"} <= set(ckpt)
    meta = json.loads((run / "run.json").read_text())
    assert meta["config"]["train_ids"] == [0, 1] and meta["wall_time_s"] >= 0 and meta["version"]

    out = tmp_path / "eval.json"
    args = ["eval", "--checkpoint", str(run / "seed0.ckpt.json"), "--data", str(dataset), "--ids", "2,3"]
    assert main(args + ["--out", str(out)]) == 0
    first = out.read_text()
    assert main(args + ["--out", str(out)]) == 0
    assert out.read_text() == first
    assert set(json.loads(first)["problems"]) == {"2", "3"}
    assert main(args + ["--oracle", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["accuracy"] == 1.0

    run2 = tmp_path / "runs" / "mlp"
    assert main(["train", "--data", str(dataset), "--out", str(run2), "--episodes", "10",
                 "--episode-length", "24", "--seed", "3", "--model", "mlp"]) == 0
    rep = tmp_path / "rep"
    assert main(["report", str(run), str(run2), "--out", str(rep), "--window", "1"]) == 0
    svg = (rep / "report.svg").read_text()
    assert svg.count("<polyline") == 2 and svg.count("<line") == 1
    lines = (rep / "report.csv").read_text().splitlines()
    assert lines[0] == "run,episode,mean_return,std_return" and len(lines) == 21
    raw = np.array([[float(r["return"]) for r in read_metrics(run / f"seed{s}.csv")] for s in (0, 1)])
    snn_mean = [float(l.split(",")[2]) for l in lines[1:] if l.startswith("snn,")]
    assert np.allclose(snn_mean, raw.mean(axis=0), atol=1e-6)
    mlp_std = [float(l.split(",")[3]) for l in lines[1:] if l.startswith("mlp,")]
    assert all(s == 0 for s in mlp_std)


def test_report_inconsistent_runs(tmp_path):
    for name, n in (("a", 5), ("b", 6)):
        with MetricsWriter(tmp_path / name / "seed0.csv") as w:
            for k in range(n):
                w.write(MetricsRow(0, k, 10 * k, 5.0, 4.0, 0.0, 0.0, 0.7, False))
    with pytest.raises(InconsistentRuns):
        harness.write_report([tmp_path / "a", tmp_path / "b"], tmp_path / "rep")
    assert main(["report", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path)]) == EXIT_DATA


def test_smoothing():
    x = np.array([0.0, 2.0, 4.0, 6.0])
    assert harness.smooth(x, 1).tolist() == x.tolist()
    assert harness.smooth(x, 2).tolist() == [0.0, 1.0, 3.0, 5.0]
    assert harness.smooth(x, 50).tolist() == [0.0, 1.0, 2.0, 3.0]


def test_random_checkpoint_accuracy_near_half(tmp_path):
    root = tmp_path / "d"
    assert main(["generate", "--count", "20", "--seed", "2", "--out", str(root)]) == 0
    policy = Policy.create("snn", seed=0)
    ckpt = tmp_path / "init.json"
    ckpt.write_text(json.dumps(harness.checkpoint_dict(policy, OptimizerState())))
    result = harness.evaluate(ckpt, root)
    assert len(result["problems"]) == 20
    assert abs(result["accuracy"] - 0.5) <= 0.05


def test_checkpoint_version_mismatch_is_data_error(dataset, tmp_path):
    d = harness.checkpoint_dict(Policy.create("snn"), OptimizerState())
    d["policy"]["format_version"] = 7
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    assert main(["eval", "--checkpoint", str(path), "--data", str(dataset)]) == EXIT_DATA
    assert main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--data", str(dataset)]) == EXIT_DATA


def test_bounds_verify_cli(capsys):
    assert main(["bounds-verify", "--trials", "0", "--seed", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["trials"] == 0
    assert main(["bounds-verify", "--trials", "300", "--seed", "3"]) == 0
    a = capsys.readouterr().out
    main(["bounds-verify", "--trials", "300", "--seed", "3"])
    assert capsys.readouterr().out == a
    assert json.loads(a)["containment_violations"] == 0


def test_bounds_verify_failure_exit_code(monkeypatch):
    import bongard.cli as cli
    monkeypatch.setattr(cli, "verify_bounds",
                        lambda t, s: {"trials": t, "containment_violations": 1, "max_endpoint_gap": 0.0})
    assert main(["bounds-verify", "--trials", "5"]) == EXIT_ACCEPTANCE


def test_training_is_bit_reproducible(tmp_path):
    bps = [noise_bp(k, bp_id=k) for k in range(3)]
    cfg = RunConfig(episodes=12, episode_length=30, seeds=[4], bounds_mode="base", min_samples=20)
    train_seed(bps, cfg, 4, csv_path=tmp_path / "a.csv")
    train_seed(bps, cfg, 4, csv_path=tmp_path / "b.csv")
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    assert a == b
    assert re.match(rb"# schema=1\n", a)
    rows = read_metrics(tmp_path / "a.csv")
    assert rows[-1]["bounds_active"] == "1" and rows[0]["bounds_active"] == "0"
