import json

import pytest

from refprobe import cli, probe, scene
from refprobe.cli import RunConfig, main

SMALL = {
    "schema": {"color": ["green", "tan"], "shape": ["triangle", "arch", "cube"]},
    "size_max": 6, "form_max_size": 3, "n_train": 300, "n_test": 100,
    "hidden_dim": 16, "decoder_hidden": 16, "learning_rate": 0.01, "batch_size": 20,
    "train_steps": 400, "heldout_scenes": 100, "sample_k": 10,
}


def write_config(path, **overrides):
    path.write_text(json.dumps({**SMALL, **overrides}))
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    config = write_config(root / "small.json", out_dir=str(root / "run"))
    assert main(["reproduce", "--config", str(config)]) == 0
    return config, root / "run"


def test_derive_seed_is_stable_and_label_specific():
    assert cli.derive_seed(0, "train") == cli.derive_seed(0, "train")
    assert cli.derive_seed(0, "train") != cli.derive_seed(0, "sample")
    assert cli.derive_seed(0, "train") != cli.derive_seed(1, "train")
    assert 0 <= cli.derive_seed(2 ** 64 - 1, "x") < 2 ** 64


def test_gen_data_counts_bounds_and_determinism(tmp_path, capsys):
    config = write_config(tmp_path / "c.json", n_train=40, n_test=273, size_max=20)
    assert main(["gen-data", "--config", str(config), "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--config", str(config), "--out", str(tmp_path / "b")]) == 0
    assert "test: 273 scenes" in capsys.readouterr().out
    for split in ("train", "test"):
        assert (tmp_path / "a" / f"{split}.jsonl").read_bytes() == (tmp_path / "b" / f"{split}.jsonl").read_bytes()
    schema = scene.AttributeSchema.from_dict(SMALL["schema"])
    data = scene.ingest_dataset(tmp_path / "a" / "test.jsonl", schema)
    assert len(data) == 273
    assert all(1 <= len(item.scene.world) <= 20 for item in data)


def test_seed_flag_changes_data(tmp_path):
    config = write_config(tmp_path / "c.json", n_train=20, n_test=20)
    main(["gen-data", "--config", str(config), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["gen-data", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "test.jsonl").read_bytes() != (tmp_path / "b" / "test.jsonl").read_bytes()


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["fit-op", "--op", "xor"])
    assert info.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_trian": 5}))
    assert main(["gen-data", "--config", str(bad)]) == 1
    assert "unknown config keys" in capsys.readouterr().err
    assert main(["gen-data", "--config", str(tmp_path / "missing.json")]) == 1
    bad.write_text(json.dumps({"sample_k": 0}))
    assert main(["gen-data", "--config", str(bad)]) == 1
    assert main(["eval-theories", "--out", str(tmp_path / "empty")]) == 1


def test_runtime_errors_exit_2(tmp_path, capsys):
    config = write_config(tmp_path / "c.json", n_train=5, n_test=5, out_dir=str(tmp_path))
    assert main(["gen-data", "--config", str(config)]) == 0
    (tmp_path / "model.ckpt").write_bytes(b"RPTENSOR\x01")
    assert main(["eval-theories", "--config", str(config)]) == 2
    assert "error" in capsys.readouterr().err


def test_empty_alignment_is_diagnosed(tmp_path, capsys):
    # an untrained model decodes (almost) nothing like the annotations
    config = write_config(tmp_path / "c.json", n_train=20, n_test=10, train_steps=0, heldout_scenes=5,
                          out_dir=str(tmp_path))
    assert main(["gen-data", "--config", str(config)]) == 0
    assert main(["train", "--config", str(config)]) == 0
    capsys.readouterr()
    assert main(["fit-op", "--config", str(config), "--op", "not"]) == 2
    assert "no aligned pairs" in capsys.readouterr().err


def test_reproduce_summary(small_run):
    _, run = small_run
    summary = (run / "summary.txt").read_text()
    assert "0.92/0.63/0.35" in summary
    for name in ("[theories]", "[operator negation]", "[operator conjunction]", "[operator disjunction]"):
        assert name in summary
    for artifact in ("train.jsonl", "test.jsonl", "model.ckpt", "theories.txt", "operator_not.op",
                     "operator_and.op", "operator_or.op", "pca_not.tsv", "pca_or.tsv"):
        assert (run / artifact).exists()


def test_reports_embed_digest_and_seeds(small_run):
    config, run = small_run
    cfg = RunConfig.load(config)
    report = probe.AgreementReport.from_text((run / "theories.txt").read_text())
    assert report.meta["config_digest"] == cfg.digest()
    assert report.meta["master_seed"] == "0"
    assert report.meta["sample_seed"] == str(cfg.seed("sample"))
    assert report.meta["theory_seed"] == str(cfg.seed("theory"))
    assert [r.name for r in report.rows] == ["random", "literal", "human"]
    op_report = probe.AgreementReport.from_text((run / "operator_not.txt").read_text())
    assert [r.name for r in op_report.rows] == ["random", "literal", "negation"]
    assert int(op_report.meta["aligned_fit"]) > 0


def test_stage_rerun_is_identical(small_run, tmp_path):
    config, run = small_run
    for op in ("not", "or"):
        before = (run / f"operator_{op}.txt").read_text()
        assert main(["fit-op", "--config", str(config), "--op", op]) == 0
        after = (run / f"operator_{op}.txt").read_text()
        assert before == after


def test_operator_file_bit_exact(small_run, tmp_path):
    _, run = small_run
    op = probe.LinearOperator.load(run / "operator_not.op")
    op.save(tmp_path / "again.op")
    assert (tmp_path / "again.op").read_bytes() == (run / "operator_not.op").read_bytes()


def test_pca_points_format(small_run):
    config, run = small_run
    lines = (run / "pca_not.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["x", "y", "label", "kind"]
    for line in lines[1:]:
        x, y, label, kind = line.split("\t")
        float(x), float(y)
        assert label and kind in ("raw", "transformed")
    before = (run / "pca_or.tsv").read_bytes()
    assert main(["pca", "--config", str(config), "--op", "or"]) == 0
    assert (run / "pca_or.tsv").read_bytes() == before


def test_pca_needs_operator(small_run, tmp_path):
    config, _ = small_run
    assert main(["pca", "--config", str(config), "--op", "not", "--operator", str(tmp_path / "none.op")]) == 1


def test_dataset_sample_source(small_run, tmp_path):
    config, run = small_run
    cfg = RunConfig.load(config)
    other = write_config(tmp_path / "c.json", out_dir=str(run), sample_source="dataset")
    report = cli.cmd_eval_theories(RunConfig.load(other))
    assert report.meta["sample_source"] == "dataset"
    assert report.meta["config_digest"] != cfg.digest()
    (run / "theories.txt").unlink()
    assert main(["eval-theories", "--config", str(config)]) == 0
