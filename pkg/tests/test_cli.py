"""Command-line surface: fast subcommands, config validation, exit codes."""

import csv
import json

import numpy as np
import pytest

from ttig import checkpoint, cli, pngio


def _cfg(tmp_path, body):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(body))
    return str(path)


def _last_json(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


TINY_DATA = {"data": {"n_train": 8, "n_eval": 4, "image_size": 16, "seed": 0}}


def test_no_arguments_is_a_usage_error(capsys):
    assert cli.run([]) == 1


def test_unknown_command_is_a_usage_error(capsys):
    assert cli.run(["frobnicate"]) == 1


def test_missing_required_flag_is_a_usage_error(capsys):
    assert cli.run(["make-data"]) == 1


def test_make_data_writes_images_and_manifest(tmp_path, capsys):
    cfg = _cfg(tmp_path, TINY_DATA)
    out = tmp_path / "data"
    assert cli.run(["make-data", "--config", cfg, "--out", str(out)]) == 0
    rec = _last_json(capsys)
    assert rec["metric"] == "dataset_size" and rec["value"] == 8
    pngs = sorted((out / "images").glob("*.png"))
    assert len(pngs) == 8
    captions = (out / "captions.txt").read_text().splitlines()
    assert len(captions) == 8
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["split"] == "train"
    img = pngio.read_png(pngs[0])
    assert img.shape == (16, 16, 3)


def test_make_data_is_reproducible(tmp_path, capsys):
    cfg = _cfg(tmp_path, TINY_DATA)
    for name in ("a", "b"):
        assert cli.run(["make-data", "--config", cfg,
                        "--out", str(tmp_path / name)]) == 0
    for p in sorted((tmp_path / "a" / "images").glob("*.png")):
        q = tmp_path / "b" / "images" / p.name
        assert p.read_bytes() == q.read_bytes()
    assert (tmp_path / "a" / "captions.txt").read_text() == \
           (tmp_path / "b" / "captions.txt").read_text()


def test_make_data_eval_split_differs(tmp_path, capsys):
    cfg = _cfg(tmp_path, TINY_DATA)
    cli.run(["make-data", "--config", cfg, "--out", str(tmp_path / "tr")])
    cli.run(["make-data", "--config", cfg, "--split", "eval",
             "--out", str(tmp_path / "ev")])
    tr = set((tmp_path / "tr" / "captions.txt").read_text().splitlines())
    ev = set((tmp_path / "ev" / "captions.txt").read_text().splitlines())
    assert not tr & ev


def test_unknown_config_section_rejected(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"dta": {}})
    assert cli.run(["make-data", "--config", cfg,
                    "--out", str(tmp_path / "d")]) == 2


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = _cfg(tmp_path, {"data": {"n_trian": 8}})
    assert cli.run(["make-data", "--config", cfg,
                    "--out", str(tmp_path / "d")]) == 2


def test_malformed_config_json_rejected(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text("{oops")
    assert cli.run(["make-data", "--config", str(path),
                    "--out", str(tmp_path / "d")]) == 2


def test_missing_config_file_rejected(tmp_path, capsys):
    assert cli.run(["make-data", "--config", str(tmp_path / "none.json"),
                    "--out", str(tmp_path / "d")]) == 2


def test_simulate_pipeline_closed_form(capsys):
    assert cli.run(["simulate-pipeline", "--stages", "4",
                    "--microbatches", "8"]) == 0
    rec = _last_json(capsys)
    assert rec["stages"] == 4 and rec["microbatches"] == 8
    assert rec["bubble_ratio"] == pytest.approx(3.0 / 11.0)
    assert rec["makespan"] == 22.0


def test_simulate_pipeline_bad_spec_is_a_data_error(capsys):
    assert cli.run(["simulate-pipeline", "--stages", "0",
                    "--microbatches", "4"]) == 2


def test_simulate_pipeline_trace_file(tmp_path, capsys):
    trace = tmp_path / "trace.json"
    assert cli.run(["simulate-pipeline", "--stages", "2", "--microbatches", "3",
                    "--trace", str(trace)]) == 0
    blob = json.loads(trace.read_text())
    assert set(blob) == {"spec", "devices", "makespan"}
    assert len(blob["devices"]) == 2


def test_simulate_pipeline_sweep_csv(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert cli.run(["simulate-pipeline", "--stages", "2",
                    "--sweep", "microbatches=1:4", "--csv", str(out)]) == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert [int(r["microbatches"]) for r in rows] == [1, 2, 3, 4]
    assert float(rows[-1]["bubble_ratio"]) < float(rows[0]["bubble_ratio"])


def test_sweep_without_csv_is_a_usage_error(capsys):
    assert cli.run(["simulate-pipeline", "--sweep", "microbatches=1:4"]) == 1


def test_bad_sweep_spec_is_a_usage_error(tmp_path, capsys):
    assert cli.run(["simulate-pipeline", "--sweep", "microbatches=alpha:4",
                    "--csv", str(tmp_path / "s.csv")]) == 1


def test_shard_cost_reports_both_strategies(capsys):
    assert cli.run(["shard-cost", "--n-way", "4", "--batch", "2", "--seq", "8",
                    "--d-model", "16", "--d-mlp", "64"]) == 0
    rec = _last_json(capsys)
    costs = rec["costs"]
    assert set(costs) == {"allreduce", "reducescatter_allgather"}
    ar, sc = costs["allreduce"], costs["reducescatter_allgather"]
    assert ar["comm_bytes_per_layer"] == sc["comm_bytes_per_layer"]
    assert sc["peak_activation_elems"] * 4 == ar["peak_activation_elems"]


def test_shard_cost_single_strategy(capsys):
    assert cli.run(["shard-cost", "--n-way", "2", "--batch", "1", "--seq", "4",
                    "--d-model", "8", "--d-mlp", "32",
                    "--strategy", "allreduce"]) == 0
    rec = _last_json(capsys)
    assert set(rec["costs"]) == {"allreduce"}


def test_shard_cost_invalid_split_is_a_data_error(capsys):
    assert cli.run(["shard-cost", "--n-way", "3", "--batch", "2", "--seq", "8",
                    "--d-model", "16", "--d-mlp", "64"]) == 2


def test_inspect_checkpoint(tmp_path, capsys):
    state = {"layer.w": np.arange(24, dtype=np.float32).reshape(4, 6),
             "layer.b": np.zeros(6, np.float32)}
    checkpoint.save_checkpoint(state, {"kind": "demo"}, tmp_path / "ck")
    assert cli.run(["inspect-checkpoint", "--dir", str(tmp_path / "ck")]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["kind"] == "demo"
    assert rec["n_params"] == 30
    names = {p["name"]: p for p in rec["params"]}
    assert names["layer.w"]["shape"] == [4, 6]


def test_inspect_checkpoint_missing_dir(tmp_path, capsys):
    assert cli.run(["inspect-checkpoint", "--dir", str(tmp_path / "no")]) == 2


def test_inspect_checkpoint_rejects_corrupt_manifest(tmp_path, capsys):
    ck = tmp_path / "ck"
    checkpoint.save_checkpoint({"w": np.zeros(3, np.float32)}, {}, ck)
    manifest = json.loads((ck / "manifest.json").read_text())
    manifest["params"][0]["byte_len"] = 999
    (ck / "manifest.json").write_text(json.dumps(manifest))
    assert cli.run(["inspect-checkpoint", "--dir", str(ck)]) == 2


def _tiny_checkpoints(tmp_path):
    from ttig import seq2seq, vq
    tok_cfg = vq.TokenizerConfig(image_size=16, patch=4, d_model=32, heads=4,
                                 n_blocks=1, d_mlp=64, codebook_size=16)
    checkpoint.save_tokenizer(vq.build_tokenizer(tok_cfg, seed=0),
                              tmp_path / "tok")
    mcfg = seq2seq.ModelConfig(enc_layers=1, dec_layers=1, d_model=32,
                               d_mlp=64, heads=4, text_vocab=300,
                               image_vocab=16, text_len=12, grid_h=4, grid_w=4)
    w = seq2seq.build_model(mcfg, seed=0)
    checkpoint.save_model(w, tmp_path / "model")
    from ttig import scenes, textproc
    vocab = textproc.train_bpe(["a red circle", "a blue square"], 300)
    textproc.save_vocab(vocab, tmp_path / "model" / "vocab.json")
    return tmp_path / "model", tmp_path / "tok"


def test_sample_requires_exactly_one_prompt_source(tmp_path, capsys):
    model, tok = _tiny_checkpoints(tmp_path)
    base = ["sample", "--model", str(model), "--tokenizer", str(tok),
            "--out", str(tmp_path / "s")]
    assert cli.run(base) == 1
    assert cli.run(base + ["--prompt", "a red circle",
                           "--prompts", "x.tsv"]) == 1


def test_sample_prompt_list_writes_one_dir_per_row(tmp_path, capsys):
    model, tok = _tiny_checkpoints(tmp_path)
    tsv = tmp_path / "p.tsv"
    tsv.write_text("Prompt\tCategory\tChallenge\n"
                   "a red circle\tAbstract\tBasic\n"
                   "a blue square\tArts\tSimple Detail\n")
    out = tmp_path / "batch"
    assert cli.run(["sample", "--model", str(model), "--tokenizer", str(tok),
                    "--prompts", str(tsv), "--n-samples", "1",
                    "--out", str(out)]) == 0
    index = json.loads((out / "index.json").read_text())
    assert [r["prompt"] for r in index] == ["a red circle", "a blue square"]
    assert index[0]["seed"] != index[1]["seed"]
    meta = json.loads((out / "prompt_001" / "meta.json").read_text())
    assert meta["category"] == "Arts"
    assert (out / "prompt_001" / "sample_00.png").exists()


def test_sample_malformed_prompt_list_is_a_data_error(tmp_path, capsys):
    model, tok = _tiny_checkpoints(tmp_path)
    tsv = tmp_path / "bad.tsv"
    tsv.write_text("a red circle\tNope\tBasic\n")
    assert cli.run(["sample", "--model", str(model), "--tokenizer", str(tok),
                    "--prompts", str(tsv), "--out", str(tmp_path / "s")]) == 2


def test_sample_missing_prompt_list_is_a_data_error(tmp_path, capsys):
    model, tok = _tiny_checkpoints(tmp_path)
    assert cli.run(["sample", "--model", str(model), "--tokenizer", str(tok),
                    "--prompts", str(tmp_path / "no.tsv"),
                    "--out", str(tmp_path / "s")]) == 2
