import json
from pathlib import Path

import numpy as np
import pytest

from cream import persist
from cream.cli import main
from cream.model import ModelConfig, init_params
from cream.runconfig import ConfigError, load_run_config, parse_run_config
from cream.training import rng_for

MICRO_MODEL = {
    "width": 16, "common_dim": 8, "patch_size": 8, "patch_budget": 32,
    "max_aux_len": 32, "num_queries": 2, "lm_width": 16, "max_decode_len": 160,
    "vision_layers": 1, "aux_layers": 1, "decoder_layers": 1, "heads": 2,
    "lm_layers": 1, "lm_max_len": 96, "pairs_per_image": 2,
}


def write_config(tmp_path, **overrides) -> Path:
    doc = {
        "model": MICRO_MODEL,
        "data": {"count": 6, "seed": 11, "min_fields": 3, "max_fields": 3},
        "train": {
            "phases": [
                {"name": "mixed", "steps": 2, "batch_size": 3, "lr": 1e-3, "schedule": "fixed",
                 "proportions": {"TR": 0.22, "MTP": 0.46, "CAPT": 0.22, "QA": 0.05, "QG": 0.05}},
                {"name": "qa", "steps": 2, "batch_size": 3, "lr": 5e-4, "schedule": "cosine",
                 "proportions": {"QA": 1.0}},
            ],
            "log_interval": 1,
        },
        "eval": {"drop_rates": [0.0, 0.5, 1.0], "questions_per_doc": 1, "seed": 1},
        "integrate": {"steps": 2, "batch_size": 2, "lm_max_steps": 800, "lm_batch_size": 12},
    }
    for key, value in overrides.items():
        doc[key] = {**doc.get(key, {}), **value}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def run(argv) -> int:
    return main([str(a) for a in argv])


def dir_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


@pytest.fixture()
def dataset(tmp_path):
    cfg = write_config(tmp_path)
    data_dir = tmp_path / "data"
    assert run(["gen-data", "--config", cfg, "--out", data_dir]) == 0
    return cfg, data_dir


# ---------------------------------------------------------------------------
# config parsing

def test_unknown_keys_all_reported():
    with pytest.raises(ConfigError) as err:
        parse_run_config({"model": {"bogus": 1, "width": 16}, "data": {"alsobad": 2}, "oops": {}})
    text = str(err.value)
    assert "model.bogus" in text and "data.alsobad" in text and "oops" in text


def test_defaults_materialized(tmp_path):
    cfg_path = write_config(tmp_path)
    config = load_run_config(cfg_path)
    from cream.runconfig import effective_config_dict

    eff = effective_config_dict(config)
    assert eff["train"]["noise_drop_max"] == 0.3  # default filled in
    assert eff["model"]["temperature"] == 0.07
    assert eff["eval"]["drop_rates"] == (0.0, 0.5, 1.0)


def test_invalid_json_reported(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(bad)


# ---------------------------------------------------------------------------
# gen-data

def test_gen_data_layout_and_manifest(dataset, tmp_path):
    _, data_dir = dataset
    images = sorted((data_dir / "images").glob("*.pgm"))
    lines = (data_dir / "annotations.jsonl").read_text().strip().split("\n")
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert len(images) == 6 and len(lines) == 6
    assert manifest["docs"] == 6
    record = json.loads(lines[0])
    assert set(record) == {"id", "image", "reading_text", "caption", "evidence", "qa", "seed"}
    for ev in record["evidence"]:
        assert len(ev["box"]) == 4
        assert ev["kind"] in ("OCR", "OBJECT")


def test_gen_data_reproducible(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "d1", tmp_path / "d2"
    assert run(["gen-data", "--config", cfg, "--out", out1]) == 0
    assert run(["gen-data", "--config", cfg, "--out", out2]) == 0
    assert dir_bytes(out1) == dir_bytes(out2)


# ---------------------------------------------------------------------------
# train

def test_train_steps_zero_checkpoint_equals_init(dataset, tmp_path):
    cfg_path, data_dir = dataset
    cfg = write_config(tmp_path, data={"count": 6, "seed": 11, "train_dir": str(data_dir)})
    out = tmp_path / "run0"
    assert run(["train", "--config", cfg, "--out", out, "--seed", 5, "--steps", 0]) == 0
    state, model_cfg, _ = persist.load_train_state(out / "checkpoint_final.ckpt")
    expected = init_params(model_cfg, rng_for(5, "init"), np.float64)
    assert set(state.params) == set(expected)
    for name, tensor in expected.items():
        assert state.params[name].data.tobytes() == tensor.data.tobytes(), name


def test_train_eval_round_trip(dataset, tmp_path):
    _, data_dir = dataset
    cfg = write_config(
        tmp_path, data={"count": 6, "seed": 11, "train_dir": str(data_dir), "eval_dir": str(data_dir)}
    )
    out = tmp_path / "run"
    assert run(["train", "--config", cfg, "--out", out, "--seed", 3]) == 0
    assert (out / "checkpoint_phase0.ckpt").exists()
    metrics = (out / "metrics.csv").read_text().strip().split("\n")
    assert metrics[0] == "step,task,loss_lm,loss_cl,lr"
    assert len(metrics) > 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 4

    eval_out = tmp_path / "eval"
    code = run(
        ["eval", "--config", cfg, "--out", eval_out, "--checkpoint", out / "checkpoint_final.ckpt"]
    )
    assert code == 0
    report = json.loads((eval_out / "eval.json").read_text())
    assert report["em"] == summary["val"]["em"]
    assert report["anls"] == summary["val"]["anls"]


def test_train_reproducible_byte_for_byte(dataset, tmp_path):
    _, data_dir = dataset
    cfg = write_config(tmp_path, data={"count": 6, "seed": 11, "train_dir": str(data_dir)})
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    for out in (out1, out2):
        assert run(["train", "--config", cfg, "--out", out, "--seed", 7, "--precision", "f64"]) == 0
    assert dir_bytes(out1) == dir_bytes(out2)


# ---------------------------------------------------------------------------
# sweep / diagnose / grad-check

def trained_checkpoint(tmp_path, data_dir):
    cfg = write_config(tmp_path, data={"count": 6, "seed": 11, "train_dir": str(data_dir)})
    out = tmp_path / "ckpt_run"
    assert run(["train", "--config", cfg, "--out", out, "--seed", 1]) == 0
    return cfg, out / "checkpoint_final.ckpt"


def test_sweep_rows_and_reproducibility(dataset, tmp_path):
    _, data_dir = dataset
    cfg, ckpt = trained_checkpoint(tmp_path, data_dir)
    cfg = write_config(
        tmp_path, data={"count": 6, "seed": 11, "train_dir": str(data_dir), "eval_dir": str(data_dir)}
    )
    s1, s2 = tmp_path / "s1", tmp_path / "s2"
    for out in (s1, s2):
        assert run(["sweep", "--config", cfg, "--out", out, "--checkpoint", ckpt]) == 0
    rows = (s1 / "sweep.csv").read_text().strip().split("\n")
    assert rows[0] == "rate,em,anls,ned"
    assert len(rows) == 4  # three configured rates
    assert dir_bytes(s1) == dir_bytes(s2)


def test_diagnose_artifacts(dataset, tmp_path):
    _, data_dir = dataset
    cfg, ckpt = trained_checkpoint(tmp_path, data_dir)
    cfg = write_config(
        tmp_path, data={"count": 6, "seed": 11, "train_dir": str(data_dir), "eval_dir": str(data_dir)}
    )
    out = tmp_path / "diag"
    assert run(["diagnose", "--config", cfg, "--out", out, "--checkpoint", ckpt]) == 0
    fit = json.loads((out / "fit.json").read_text())
    assert 0.0 <= fit["variance"] <= 1.0
    assert (out / "pca.csv").read_text().startswith("row,doc_id,modality,")
    hist = (out / "cosine_hist.csv").read_text().strip().split("\n")
    counts = sum(int(r.split(",")[2]) for r in hist[1:])
    assert counts > 0


def test_grad_check_command(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "gc"
    assert run(["grad-check", "--config", cfg, "--out", out, "--coords", 60]) == 0
    report = json.loads((out / "grad_check.json").read_text())
    assert report["passed"] and report["max_rel_err"] < 1e-4


def test_grad_check_requires_f64(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert run(["grad-check", "--config", cfg, "--out", tmp_path / "x", "--precision", "f32"]) == 1
    assert "f64" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# integrate

def test_integrate_end_to_end(dataset, tmp_path):
    _, data_dir = dataset
    cfg, ckpt = trained_checkpoint(tmp_path, data_dir)
    big_data = tmp_path / "bigdata"
    cfg_big = write_config(tmp_path, data={"count": 60, "seed": 21})
    assert run(["gen-data", "--config", cfg_big, "--out", big_data]) == 0
    cfg2 = write_config(tmp_path, data={"count": 60, "seed": 21, "train_dir": str(big_data)})
    out = tmp_path / "integ"
    assert run(["integrate", "--config", cfg2, "--out", out, "--checkpoint", ckpt]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 2
    assert summary["frozen_count"] > 0
    assert (out / "lm.ckpt").exists()
    istate = persist.load_integration_state(out / "integration_final.ckpt")
    istate.verify_frozen()


def test_error_is_one_line_and_nonzero(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code = run(["train", "--config", cfg, "--out", tmp_path / "x"])  # train_dir unset
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error:") and "\n" not in err
