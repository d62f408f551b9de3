"""Command-line orchestration: data, training, sampling, evaluation, sims.

Every subcommand reads an optional JSON run config (strict schema, unknown
keys rejected) plus flag overrides, and exits 0 on success, 1 on usage
errors, 2 on data/format errors, 3 on numeric failures. Diagnostics are one
line on stderr; structured results are JSON lines on stdout or in files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import (checkpoint, contrastive, metrics, optim, pipesim, pngio,
               sampling, scenes, seq2seq, textproc, vq)
from .errors import DataError, NumericError, UsageError
from .tensor import CatalogError, ShapeError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# run config

def _names(cls):
    return {f.name for f in dc_fields(cls)}


_DATA_KEYS = {"n_train", "n_eval", "seed", "holdout_frac", "holdout_seed",
              "image_size"}
_SIM_KEYS = {"stages", "microbatches", "rounds", "t_f", "t_b", "latency",
             "n_way", "batch", "seq", "d_model", "d_mlp", "strategy",
             "element_size", "prologue", "epilogue", "dp_ways"}

_SCHEMA = {
    "data": _DATA_KEYS,
    "tokenizer": _names(vq.TokenizerConfig) | _names(vq.TokTrainConfig),
    "model": _names(seq2seq.ModelConfig) | _names(seq2seq.TrainConfig)
             | {"pretrain_steps", "pretrain_mask_rate"},
    "optimizer": _names(optim.OptimizerConfig),
    "sampler": _names(sampling.SamplerConfig),
    "reranker": _names(contrastive.EncoderConfig) | _names(contrastive.CLTrainConfig),
    "sim": _SIM_KEYS,
}


def load_config(path) -> dict:
    """Parse and validate a RunConfig JSON file; unknown keys are rejected."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise DataError(f"config {path} must be a JSON object")
    for section, content in doc.items():
        if section not in _SCHEMA:
            raise DataError(f"unknown config section {section!r} "
                            f"(expected one of {sorted(_SCHEMA)})")
        if not isinstance(content, dict):
            raise DataError(f"config section {section!r} must be an object")
        unknown = set(content) - _SCHEMA[section]
        if unknown:
            raise DataError(f"unknown key(s) {sorted(unknown)} in config "
                            f"section {section!r}")
    return doc


def _pick(section: dict, cls, **overrides):
    """Instantiate cls from the matching keys of a config section."""
    kwargs = {k: v for k, v in section.items() if k in _names(cls)}
    for k, v in overrides.items():
        if v is not None:
            kwargs[k] = v
    return cls(**kwargs)


def _data_params(cfg: dict) -> dict:
    d = {"n_train": 2048, "n_eval": 256, "seed": 0, "holdout_frac": 0.15,
         "holdout_seed": 0, "image_size": 32}
    d.update(cfg.get("data", {}))
    return d


def _caption_splits(d: dict):
    return scenes.split_captions(d["holdout_seed"], d["holdout_frac"])


def _train_dataset(d: dict, size=None):
    _, held = _caption_splits(d)
    return scenes.gen_dataset(d["n_train"], d["seed"], exclude_captions=held,
                              size=size or d["image_size"])


def _eval_dataset(d: dict, size=None):
    train_caps, _ = _caption_splits(d)
    return scenes.gen_dataset(d["n_eval"], d["seed"] + 1,
                              exclude_captions=train_caps,
                              size=size or d["image_size"])


def _emit(record: dict, out=None):
    line = json.dumps(record)
    if out:
        with open(out, "a") as f:
            f.write(line + "\n")
    print(line)


def _read_image_dir(path) -> np.ndarray:
    root = Path(path)
    if (root / "images").is_dir():
        root = root / "images"
    files = sorted(root.glob("*.png"))
    if not files:
        raise DataError(f"no .png files under {path}")
    return np.stack([pngio.read_png(f) for f in files])


# ---------------------------------------------------------------------------
# subcommands

def cmd_make_data(args) -> int:
    cfg = load_config(args.config)
    d = _data_params(cfg)
    if args.seed is not None:
        d["seed"] = args.seed
    n = args.n if args.n is not None else (
        d["n_eval"] if args.split == "eval" else d["n_train"])
    train_caps, held_caps = _caption_splits(d)
    exclude = {"train": held_caps, "eval": train_caps, "all": ()}[args.split]
    seed = d["seed"] + (1 if args.split == "eval" else 0)
    ds = scenes.gen_dataset(n, seed, exclude_captions=exclude,
                            size=d["image_size"])
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(ds.images):
        pngio.write_png(out / "images" / f"img_{i:05d}.png", img)
    (out / "captions.txt").write_text("\n".join(ds.captions) + "\n")
    manifest = {"kind": "dataset", "format_version": 1, "n": n, "seed": seed,
                "split": args.split, "image_size": d["image_size"],
                "holdout_frac": d["holdout_frac"],
                "holdout_seed": d["holdout_seed"]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    _emit({"metric": "dataset_size", "value": n, "n_a": n, "n_b": 0,
           "feature_fn": "none", "seed": seed})
    return 0


def cmd_train_tokenizer(args) -> int:
    cfg = load_config(args.config)
    d = _data_params(cfg)
    sec = cfg.get("tokenizer", {})
    tok_cfg = _pick(sec, vq.TokenizerConfig, image_size=d["image_size"])
    tcfg = _pick(sec, vq.TokTrainConfig, steps=args.steps, seed=args.seed)
    ds = _train_dataset(d)
    w, history = vq.train_tokenizer(ds.images, tok_cfg, tcfg)
    checkpoint.save_tokenizer(w, args.out)
    held = _eval_dataset(d)
    mse = vq.reconstruction_mse(w, held.images)
    ids = vq.tokenize(w, ds.images[:256]).reshape(-1)
    stats = vq.codebook_stats(ids, tok_cfg.codebook_size)
    hist_path = Path(args.out) / "history.json"
    hist_path.write_text(json.dumps(history))
    for name, value in (("tokenizer_holdout_mse", mse),
                        ("codebook_usage_fraction", stats["usage_fraction"]),
                        ("codebook_perplexity", stats["perplexity"])):
        _emit({"metric": name, "value": value, "n_a": len(held), "n_b": 0,
               "feature_fn": "none", "seed": tcfg.seed},
              Path(args.out) / "metrics.jsonl")
    return 0


def _encode_captions(vocab, captions, text_len):
    rows = [textproc.pad_to(textproc.encode_clipped(vocab, c, text_len), text_len)
            for c in captions]
    return np.asarray(rows, dtype=np.int64)


def cmd_train_model(args) -> int:
    cfg = load_config(args.config)
    d = _data_params(cfg)
    sec = cfg.get("model", {})
    mcfg = _pick(sec, seq2seq.ModelConfig)
    tcfg = _pick(sec, seq2seq.TrainConfig, steps=args.steps, seed=args.seed)
    opt_cfg = None
    if "optimizer" in cfg:
        opt_cfg = _pick(cfg["optimizer"], optim.OptimizerConfig)
    tok = checkpoint.load_tokenizer(args.tokenizer)
    if tok.cfg.codebook_size != mcfg.image_vocab:
        raise DataError(f"tokenizer codebook size {tok.cfg.codebook_size} != "
                        f"model image_vocab {mcfg.image_vocab}")
    ds = _train_dataset(d)
    vocab = textproc.train_bpe(ds.captions, vocab_size=mcfg.text_vocab)
    text_ids = _encode_captions(vocab, ds.captions, mcfg.text_len)
    image_ids = vq.tokenize(tok, ds.images).reshape(len(ds), -1)
    w = seq2seq.build_model(mcfg, seed=tcfg.seed)
    pre_steps = int(sec.get("pretrain_steps", 0))
    if pre_steps:
        w, _ = seq2seq.pretrain_text_encoder(
            w, text_ids, mask_rate=float(sec.get("pretrain_mask_rate", 0.15)),
            steps=pre_steps, seed=tcfg.seed)
    w, history = seq2seq.train_model(w, text_ids, image_ids, tcfg, opt_cfg)
    checkpoint.save_model(w, args.out)
    textproc.save_vocab(vocab, Path(args.out) / "vocab.json")
    Path(args.out, "history.json").write_text(json.dumps(history))
    _emit({"metric": "final_smoothed_loss", "value": seq2seq.smoothed(history),
           "n_a": len(ds), "n_b": 0, "feature_fn": "none", "seed": tcfg.seed},
          Path(args.out) / "metrics.jsonl")
    return 0


def cmd_train_reranker(args) -> int:
    cfg = load_config(args.config)
    d = _data_params(cfg)
    sec = cfg.get("reranker", {})
    ecfg = _pick(sec, contrastive.EncoderConfig, image_size=d["image_size"])
    tcfg = _pick(sec, contrastive.CLTrainConfig, steps=args.steps,
                 seed=args.seed)
    ds = _train_dataset(d)
    vocab = textproc.train_bpe(ds.captions, vocab_size=ecfg.text_vocab)
    cap_ids = [textproc.encode_clipped(vocab, c, ecfg.text_len)
               for c in ds.captions]
    enc, history = contrastive.train_contrastive(ds.images, cap_ids, tcfg, ecfg)
    checkpoint.save_encoder(enc, args.out)
    textproc.save_vocab(vocab, Path(args.out) / "vocab.json")
    Path(args.out, "history.json").write_text(json.dumps(history))
    _emit({"metric": "contrastive_final_loss", "value": float(np.mean(history[-20:])),
           "n_a": len(ds), "n_b": 0, "feature_fn": "none", "seed": tcfg.seed},
          Path(args.out) / "metrics.jsonl")
    return 0


def cmd_train_sr(args) -> int:
    cfg = load_config(args.config)
    d = _data_params(cfg)
    lo = _train_dataset(d, size=d["image_size"])
    hi = _train_dataset(d, size=2 * d["image_size"])
    srcfg = vq.SRConfig()
    steps = args.steps if args.steps is not None else 400
    seed = args.seed if args.seed is not None else 0
    w, history = vq.train_sr(lo.images, hi.images, srcfg, steps=steps, seed=seed)
    checkpoint.save_sr(w, args.out)
    Path(args.out, "history.json").write_text(json.dumps(history))
    _emit({"metric": "sr_final_loss", "value": float(np.mean(history[-20:])),
           "n_a": len(lo), "n_b": 0, "feature_fn": "none", "seed": seed},
          Path(args.out) / "metrics.jsonl")
    return 0


def _write_sample_dir(out: Path, batch, scfg, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(batch.images):
        name = f"sample_{i:02d}.png"
        pngio.write_png(out / name, img)
        names.append(name)
    meta = {"prompt": batch.prompt, "seed": scfg.seed,
            "guidance": scfg.guidance, "temperature": scfg.temperature,
            "top_k": scfg.top_k, "n_samples": scfg.n_samples,
            "files": names, "scores": None,
            "grids": np.asarray(batch.grids).tolist()}
    if extra:
        meta.update(extra)
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    return names


def cmd_sample(args) -> int:
    if (args.prompt is None) == (args.prompts is None):
        raise UsageError("give exactly one of --prompt or --prompts")
    cfg = load_config(args.config)
    sec = cfg.get("sampler", {})
    scfg = _pick(sec, sampling.SamplerConfig, guidance=args.guidance,
                 n_samples=args.n_samples, seed=args.seed,
                 top_k=args.top_k, temperature=args.temperature)
    # parse the prompt list before loading anything heavy
    rows = scenes.load_prompts(args.prompts) if args.prompts else None
    w = checkpoint.load_model(args.model)
    vocab = textproc.load_vocab(Path(args.model) / "vocab.json")
    tok = checkpoint.load_tokenizer(args.tokenizer)
    sr = checkpoint.load_sr(args.sr) if args.sr else None
    out = Path(args.out)
    if rows is None:
        batch = sampling.generate(w, vocab, tok, args.prompt, scfg, sr=sr)
        names = _write_sample_dir(out, batch, scfg)
        _emit({"metric": "samples_written", "value": len(names),
               "n_a": len(names), "n_b": 0, "feature_fn": "none",
               "seed": scfg.seed})
        return 0
    index = []
    total = 0
    for i, row in enumerate(rows):
        # one seed per row so the whole list is reproducible yet varied
        row_cfg = dataclasses.replace(scfg, seed=scfg.seed + i)
        batch = sampling.generate(w, vocab, tok, row.prompt, row_cfg, sr=sr)
        sub = f"prompt_{i:03d}"
        names = _write_sample_dir(out / sub, batch, row_cfg,
                                  extra={"category": row.category,
                                         "challenge": row.challenge})
        total += len(names)
        index.append({"dir": sub, "prompt": row.prompt,
                      "category": row.category, "challenge": row.challenge,
                      "seed": row_cfg.seed})
    (out / "index.json").write_text(json.dumps(index, indent=2))
    _emit({"metric": "samples_written", "value": total,
           "n_a": total, "n_b": len(rows), "feature_fn": "none",
           "seed": scfg.seed})
    return 0


def _load_sample_dir(path):
    meta_path = Path(path) / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{path} has no meta.json (not a sample directory)")
    meta = json.loads(meta_path.read_text())
    images = np.stack([pngio.read_png(Path(path) / f) for f in meta["files"]])
    return meta, images


def cmd_rerank(args) -> int:
    meta, images = _load_sample_dir(args.dir)
    enc = checkpoint.load_encoder(args.reranker)
    vocab = textproc.load_vocab(Path(args.reranker) / "vocab.json")
    grids = np.asarray(meta["grids"])
    batch = sampling.SampleBatch(prompt=meta["prompt"], grids=grids,
                                 images=images, seed=meta["seed"])
    ranked = sampling.rerank(batch, contrastive.make_scorer(enc, vocab))
    out = Path(args.out or (Path(args.dir) / "reranked"))
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(ranked.images):
        name = f"rank_{i:02d}.png"
        pngio.write_png(out / name, img)
        names.append(name)
    meta_out = dict(meta)
    meta_out.update({"files": names, "scores": ranked.scores.tolist(),
                     "grids": np.asarray(ranked.grids).tolist(),
                     "source": str(args.dir)})
    (out / "meta.json").write_text(json.dumps(meta_out, indent=2))
    _emit({"metric": "rerank_top_score", "value": float(ranked.scores[0]),
           "n_a": len(names), "n_b": 0, "feature_fn": "contrastive-cosine",
           "seed": meta["seed"]})
    return 0


def cmd_eval_fid(args) -> int:
    real = _read_image_dir(args.real)
    gen = _read_image_dir(args.gen)
    enc = checkpoint.load_encoder(args.features)
    value = metrics.fid(real, gen, lambda imgs: contrastive.image_features(enc, imgs))
    seed = args.seed if args.seed is not None else 0
    _emit(metrics.metric_record("fid", value, len(real), len(gen),
                                "contrastive-pool", seed), args.out)
    return 0


def cmd_eval_alignment(args) -> int:
    meta, images = _load_sample_dir(args.dir)
    scores = [metrics.caption_fidelity(img, meta["prompt"]) for img in images]
    _emit(metrics.metric_record("caption_fidelity_mean", float(np.mean(scores)),
                                len(images), 0, "oracle", meta["seed"]),
          args.out)
    _emit(metrics.metric_record("caption_fidelity_best", float(np.max(scores)),
                                len(images), 0, "oracle", meta["seed"]),
          args.out)
    return 0


def cmd_retrieve(args) -> int:
    enc = checkpoint.load_encoder(args.reranker)
    vocab = textproc.load_vocab(Path(args.reranker) / "vocab.json")
    cap_ids = textproc.encode_clipped(vocab, args.caption, enc.cfg.text_len)
    captions = None
    if args.index:
        index = contrastive.load_index(args.index)
    else:
        cfg = load_config(args.config)
        d = _data_params(cfg)
        if args.exclude_query:
            _, held = _caption_splits(d)
            exclude = set(held) | {args.caption}
            ds = scenes.gen_dataset(d["n_train"], d["seed"],
                                    exclude_captions=exclude,
                                    size=d["image_size"])
        else:
            ds = _train_dataset(d)
        captions = ds.captions
        index = contrastive.build_index(enc, ds.images)
        if args.index_out:
            contrastive.save_index(index, args.index_out)
    ids, sims = contrastive.retrieve_nearest(enc, index, cap_ids, args.k)
    results = []
    for i, s in zip(ids.tolist(), sims.tolist()):
        row = {"id": i, "score": s}
        if captions is not None:
            row["caption"] = captions[i]
        results.append(row)
    print(json.dumps({"caption": args.caption, "k": args.k,
                      "in_dataset": not args.exclude_query,
                      "results": results}))
    return 0


def cmd_simulate_pipeline(args) -> int:
    cfg = load_config(args.config).get("sim", {})
    spec = pipesim.PipelineSpec(
        stages=args.stages if args.stages is not None else cfg.get("stages", pipesim.FULL_SCALE_STAGES),
        microbatches=args.microbatches if args.microbatches is not None else cfg.get("microbatches", 8),
        rounds=args.rounds if args.rounds is not None else cfg.get("rounds", 1),
        t_f=args.t_f if args.t_f is not None else cfg.get("t_f", 1.0),
        t_b=args.t_b if args.t_b is not None else cfg.get("t_b", 1.0),
        latency=args.latency if args.latency is not None else cfg.get("latency", 0.0),
    )
    prologue = cfg.get("prologue", 0.0)
    epilogue = cfg.get("epilogue", 0.0)
    dp_ways = cfg.get("dp_ways", 1)
    if args.sweep:
        field, _, rng = args.sweep.partition("=")
        lo, _, hi = rng.partition(":")
        try:
            values = range(int(lo), int(hi) + 1)
        except ValueError:
            raise UsageError(f"bad --sweep {args.sweep!r}; expected name=lo:hi")
        if field not in ("microbatches", "rounds", "stages"):
            raise UsageError(f"--sweep field must be microbatches, rounds or stages")
        specs = [pipesim.PipelineSpec(**{**spec.__dict__, field: v}) for v in values]
        rows = pipesim.sweep_rows(specs, prologue, epilogue, dp_ways)
        if not args.csv:
            raise UsageError("--sweep requires --csv OUT")
        pipesim.write_sweep_csv(rows, args.csv)
        print(json.dumps({"sweep": field, "rows": len(rows), "csv": args.csv}))
        return 0
    trace = pipesim.simulate_pipeline(spec)
    if args.trace:
        pipesim.write_trace(trace, args.trace)
    print(json.dumps({"stages": spec.stages, "microbatches": spec.microbatches,
                      "rounds": spec.rounds, "makespan": trace.makespan,
                      "bubble_ratio": pipesim.bubble_ratio(trace),
                      "total_time": prologue + trace.makespan + epilogue,
                      "dp_ways": dp_ways}))
    return 0


def cmd_shard_cost(args) -> int:
    cfg = load_config(args.config).get("sim", {})
    base = dict(
        n_way=args.n_way if args.n_way is not None else cfg.get("n_way", 4),
        batch=args.batch if args.batch is not None else cfg.get("batch", 16),
        seq=args.seq if args.seq is not None else cfg.get("seq", 256),
        d_model=args.d_model if args.d_model is not None else cfg.get("d_model", 1024),
        d_mlp=args.d_mlp if args.d_mlp is not None else cfg.get("d_mlp", 4096),
        element_size=args.element_size if args.element_size is not None else cfg.get("element_size", 2),
    )
    strategies = [args.strategy] if args.strategy else list(pipesim.STRATEGIES)
    out = {}
    for strat in strategies:
        out[strat] = pipesim.shard_cost(pipesim.ShardSpec(strategy=strat, **base))
    print(json.dumps({"spec": base, "costs": out}))
    return 0


def cmd_inspect_checkpoint(args) -> int:
    state, config = checkpoint.load_checkpoint(args.dir)
    total = sum(a.size for a in state.values())
    doc = {"kind": config.get("kind"), "config": config,
           "n_params": total, "n_tensors": len(state),
           "total_bytes": 4 * total,
           "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()]}
    if not args.full:
        doc["params"] = doc["params"][:16]
        doc["params_truncated"] = len(state) > 16
    print(json.dumps(doc, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> _Parser:
    p = _Parser(prog="ttig", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def add(name, fn, **help_kw):
        sp = sub.add_parser(name, **help_kw)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", default=None, help="RunConfig JSON path")
        sp.add_argument("--seed", type=int, default=None)
        return sp

    sp = add("make-data", cmd_make_data, help="render a captioned dataset to PNGs")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--split", choices=("train", "eval", "all"), default="train")

    for name, fn in (("train-tokenizer", cmd_train_tokenizer),
                     ("train-reranker", cmd_train_reranker)):
        sp = add(name, fn, help=f"{name.replace('-', ' ')} and checkpoint it")
        sp.add_argument("--out", required=True)
        sp.add_argument("--steps", type=int, default=None)

    sp = add("train-model", cmd_train_model, help="train the text-to-image model")
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=None)

    sp = add("train-sr", cmd_train_sr, help="train the 2x upsampler")
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=None)

    sp = add("sample", cmd_sample, help="generate images for a prompt")
    sp.add_argument("--model", required=True)
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--sr", default=None)
    sp.add_argument("--prompt", default=None)
    sp.add_argument("--prompts", default=None,
                    help="prompt TSV; one sample dir per row")
    sp.add_argument("--out", required=True)
    sp.add_argument("--lambda", dest="guidance", type=float, default=None)
    sp.add_argument("--n-samples", type=int, default=None)
    sp.add_argument("--top-k", type=int, default=None)
    sp.add_argument("--temperature", type=float, default=None)

    sp = add("rerank", cmd_rerank, help="order sampled images by alignment")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--reranker", required=True)
    sp.add_argument("--out", default=None)

    sp = add("eval-fid", cmd_eval_fid, help="FID between two image directories")
    sp.add_argument("--real", required=True)
    sp.add_argument("--gen", required=True)
    sp.add_argument("--features", required=True, help="dual-encoder checkpoint")
    sp.add_argument("--out", default=None)

    sp = add("eval-alignment", cmd_eval_alignment, help="oracle fidelity of a sample dir")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--out", default=None)

    sp = add("retrieve", cmd_retrieve, help="nearest training images for a caption")
    sp.add_argument("--reranker", required=True)
    sp.add_argument("--caption", required=True)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--index", default=None, help="load a saved index")
    sp.add_argument("--index-out", default=None, help="save the built index")
    sp.add_argument("--exclude-query", action="store_true",
                    help="out-of-dataset mode: index built without the query caption")

    sp = add("simulate-pipeline", cmd_simulate_pipeline, help="pipeline schedule sim")
    sp.add_argument("--stages", type=int, default=None)
    sp.add_argument("--microbatches", type=int, default=None)
    sp.add_argument("--rounds", type=int, default=None)
    sp.add_argument("--t-f", dest="t_f", type=float, default=None)
    sp.add_argument("--t-b", dest="t_b", type=float, default=None)
    sp.add_argument("--latency", type=float, default=None)
    sp.add_argument("--trace", default=None, help="write the full trace JSON here")
    sp.add_argument("--sweep", default=None, help="e.g. microbatches=1:16")
    sp.add_argument("--csv", default=None, help="sweep summary CSV path")

    sp = add("shard-cost", cmd_shard_cost, help="in-layer sharding cost model")
    sp.add_argument("--n-way", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--seq", type=int, default=None)
    sp.add_argument("--d-model", type=int, default=None)
    sp.add_argument("--d-mlp", type=int, default=None)
    sp.add_argument("--element-size", type=int, default=None)
    sp.add_argument("--strategy", choices=pipesim.STRATEGIES, default=None)

    sp = add("inspect-checkpoint", cmd_inspect_checkpoint, help="print checkpoint summary")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--full", action="store_true")

    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (DataError, ShapeError, CatalogError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
