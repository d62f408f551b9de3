"""Bit-exact checkpoint container: manifest.json plus packed float32 bytes.

The manifest records, per parameter, the name, shape, dtype, byte offset and
byte length into weights.bin (contiguous little-endian float32), alongside
the embedded config and a format_version. Loading validates the version and
the offset table (in-bounds, non-overlapping) before touching any bytes, and
a save/load round trip reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1
_DTYPE = "<f4"


def save_checkpoint(state: dict, config: dict, path):
    """state maps parameter names to float32 arrays; config is JSON-serializable."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name in state:
        arr = np.ascontiguousarray(state[name], dtype=_DTYPE)
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": _DTYPE,
            "byte_offset": offset,
            "byte_len": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "config": config, "params": entries}
    (path / "weights.bin").write_bytes(b"".join(blobs))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _validate_manifest(manifest: dict, blob_len: int):
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format_version "
                        f"{manifest.get('format_version')!r}")
    entries = manifest.get("params")
    if not isinstance(entries, list):
        raise DataError("manifest missing params list")
    spans = []
    for e in entries:
        for key in ("name", "shape", "dtype", "byte_offset", "byte_len"):
            if key not in e:
                raise DataError(f"manifest entry missing {key!r}")
        if e["dtype"] != _DTYPE:
            raise DataError(f"unsupported dtype {e['dtype']!r} for {e['name']!r}")
        n_elems = int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 1
        if e["byte_len"] != 4 * n_elems:
            raise DataError(f"byte_len {e['byte_len']} does not match shape "
                            f"{e['shape']} for {e['name']!r}")
        start, end = e["byte_offset"], e["byte_offset"] + e["byte_len"]
        if start < 0 or end > blob_len:
            raise DataError(f"{e['name']!r} spans [{start}, {end}) outside "
                            f"weights.bin of {blob_len} bytes")
        spans.append((start, end, e["name"]))
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise DataError(f"overlapping manifest spans: {n0!r} and {n1!r}")


def load_checkpoint(path):
    """-> (state dict, config dict). Validates before reading any array."""
    path = Path(path)
    mpath = path / "manifest.json"
    wpath = path / "weights.bin"
    if not mpath.exists() or not wpath.exists():
        raise DataError(f"{path} is not a checkpoint directory")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt manifest.json: {e}") from None
    blob = wpath.read_bytes()
    _validate_manifest(manifest, len(blob))
    state = {}
    for e in manifest["params"]:
        start = e["byte_offset"]
        arr = np.frombuffer(blob, dtype=_DTYPE, count=e["byte_len"] // 4,
                            offset=start)
        state[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return state, manifest["config"]


# ---------------------------------------------------------------------------
# typed wrappers: each stores the config dataclass next to the weights

def _load_kind(path, kind):
    state, config = load_checkpoint(path)
    if config.get("kind") != kind:
        raise DataError(f"expected a {kind!r} checkpoint, found "
                        f"{config.get('kind')!r} at {path}")
    return state, config


def save_model(w, path):
    save_checkpoint(w.params.state_dict(),
                    {"kind": "seq2seq", "model": asdict(w.cfg)}, path)


def load_model(path):
    from . import seq2seq
    state, config = _load_kind(path, "seq2seq")
    w = seq2seq.build_model(seq2seq.ModelConfig(**config["model"]), seed=0)
    w.params.load_state(state)
    return w


def save_tokenizer(w, path):
    save_checkpoint(w.params.state_dict(),
                    {"kind": "tokenizer", "tokenizer": asdict(w.cfg)}, path)


def load_tokenizer(path):
    from . import vq
    state, config = _load_kind(path, "tokenizer")
    w = vq.build_tokenizer(vq.TokenizerConfig(**config["tokenizer"]), seed=0)
    w.params.load_state(state)
    return w


def save_encoder(enc, path):
    save_checkpoint(enc.params.state_dict(),
                    {"kind": "dual_encoder", "encoder": asdict(enc.cfg)}, path)


def load_encoder(path):
    from . import contrastive
    state, config = _load_kind(path, "dual_encoder")
    enc = contrastive.build_encoder(
        contrastive.EncoderConfig(**config["encoder"]), seed=0)
    enc.params.load_state(state)
    return enc


def save_sr(w, path):
    save_checkpoint(w.params.state_dict(),
                    {"kind": "sr", "sr": asdict(w.cfg)}, path)


def load_sr(path):
    from . import vq
    state, config = _load_kind(path, "sr")
    w = vq.build_sr(vq.SRConfig(**config["sr"]), seed=0)
    w.params.load_state(state)
    return w
