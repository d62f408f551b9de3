"""Byte-level BPE subword tokenizer.

Ids 0..3 are specials (PAD, BOS, EOS, UNK), 4..259 are the raw bytes, and
everything above comes from merges learned greedily on a corpus: repeatedly
fuse the most frequent adjacent token pair, ties broken by the
lexicographically smallest (left_bytes, right_bytes) pair. UNK is reserved
but unreachable through encode() since every byte has an id.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .errors import DataError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
N_SPECIALS = 4
SPECIAL_NAMES = ("PAD", "BOS", "EOS", "UNK")
MIN_VOCAB = N_SPECIALS + 256


@dataclass
class Vocab:
    merges: list  # [(left_bytes, right_bytes), ...] in training order
    tokens: list  # token bytes by id; specials hold b""
    _ranks: dict = field(default_factory=dict, repr=False)
    _ids: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ranks:
            self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        if not self._ids:
            for i, tok in enumerate(self.tokens):
                if i >= N_SPECIALS and tok not in self._ids:
                    self._ids[tok] = i

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)


def _base_tokens():
    toks = [b""] * N_SPECIALS
    toks.extend(bytes([b]) for b in range(256))
    return toks


def train_bpe(corpus, vocab_size: int = 512) -> Vocab:
    """Learn merges on an iterable of strings. vocab_size >= 260."""
    if vocab_size < MIN_VOCAB:
        raise DataError(f"vocab_size must be >= {MIN_VOCAB}, got {vocab_size}")
    seq_mult = Counter(corpus)
    seqs = [[bytes([b]) for b in s.encode("utf-8")] for s in seq_mult]
    weights = list(seq_mult.values())

    pair_counts = Counter()
    pair_where = defaultdict(set)

    def scan(i, sign):
        w = weights[i] * sign
        s = seqs[i]
        for p in zip(s, s[1:]):
            pair_counts[p] += w
            if sign > 0:
                pair_where[p].add(i)

    for i in range(len(seqs)):
        scan(i, +1)

    merges = []
    taken = set()
    while len(merges) < vocab_size - MIN_VOCAB:
        best = None
        for p, c in pair_counts.items():
            if c < 2 or p in taken:
                continue
            if best is None or c > best[0] or (c == best[0] and p < best[1]):
                best = (c, p)
        if best is None:
            break  # no pair repeats anywhere
        pair = best[1]
        merges.append(pair)
        taken.add(pair)
        fused = pair[0] + pair[1]
        for i in list(pair_where[pair]):
            scan(i, -1)
            s = seqs[i]
            t = []
            j = 0
            while j < len(s):
                if j + 1 < len(s) and s[j] == pair[0] and s[j + 1] == pair[1]:
                    t.append(fused)
                    j += 2
                else:
                    t.append(s[j])
                    j += 1
            seqs[i] = t
            scan(i, +1)

    tokens = _base_tokens()
    tokens.extend(l + r for l, r in merges)
    return Vocab(merges=merges, tokens=tokens)


def _bpe_word(vocab: Vocab, text: str):
    word = [bytes([b]) for b in text.encode("utf-8")]
    ranks = vocab._ranks
    while len(word) >= 2:
        best = None
        for p in zip(word, word[1:]):
            r = ranks.get(p)
            if r is not None and (best is None or r < best[0]):
                best = (r, p)
        if best is None:
            break
        l, r = best[1]
        fused = l + r
        t = []
        j = 0
        while j < len(word):
            if j + 1 < len(word) and word[j] == l and word[j + 1] == r:
                t.append(fused)
                j += 2
            else:
                t.append(word[j])
                j += 1
        word = t
    return word


def encode(vocab: Vocab, text: str) -> list:
    """Text to ids, no specials added. Deterministic; cached per string."""
    hit = vocab._cache.get(text)
    if hit is not None:
        return list(hit)
    ids = [vocab._ids[tok] for tok in _bpe_word(vocab, text)]
    if len(vocab._cache) < 65536:
        vocab._cache[text] = tuple(ids)
    return ids


def decode(vocab: Vocab, ids) -> str:
    """Ids back to text. Specials vanish; invalid ids raise."""
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.vocab_size:
            raise DataError(f"token id {i} outside vocab of size {vocab.vocab_size}")
        if i >= N_SPECIALS:
            out.append(vocab.tokens[i])
    return b"".join(out).decode("utf-8", errors="replace")


def encode_clipped(vocab: Vocab, text: str, max_len: int) -> list:
    """BOS + ids + EOS, truncated to max_len with EOS kept last."""
    ids = [BOS_ID] + encode(vocab, text) + [EOS_ID]
    if len(ids) > max_len:
        ids = ids[:max_len - 1] + [EOS_ID]
    return ids


def pad_to(ids, max_len: int) -> list:
    return list(ids) + [PAD_ID] * (max_len - len(ids))


def save_vocab(vocab: Vocab, path):
    """Text format: header, merges (hex hex per line), then the token table."""
    lines = ["bpe v1", f"vocab_size {vocab.vocab_size}", f"merges {len(vocab.merges)}"]
    for l, r in vocab.merges:
        lines.append(f"{l.hex()} {r.hex()}")
    lines.append(f"tokens {vocab.vocab_size}")
    for i, tok in enumerate(vocab.tokens):
        if i < N_SPECIALS:
            lines.append(f"{i} {SPECIAL_NAMES[i]}")
        else:
            lines.append(f"{i} {tok.hex()}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f]
    try:
        if lines[0] != "bpe v1":
            raise DataError(f"bad vocab header: {lines[0]!r}")
        vocab_size = int(lines[1].split()[1])
        n_merges = int(lines[2].split()[1])
        merges = []
        for k in range(n_merges):
            l, r = lines[3 + k].split()
            merges.append((bytes.fromhex(l), bytes.fromhex(r)))
        tok_line = 3 + n_merges
        if lines[tok_line] != f"tokens {vocab_size}":
            raise DataError(f"bad token table header at line {tok_line + 1}")
        tokens = []
        for k in range(vocab_size):
            idx, val = lines[tok_line + 1 + k].split()
            if int(idx) != k:
                raise DataError(f"token table out of order at line {tok_line + 2 + k}")
            if k < N_SPECIALS:
                if val != SPECIAL_NAMES[k]:
                    raise DataError(f"expected special {SPECIAL_NAMES[k]} at id {k}")
                tokens.append(b"")
            else:
                tokens.append(bytes.fromhex(val))
    except (IndexError, ValueError) as e:
        raise DataError(f"malformed vocab file {path}: {e}") from e
    rebuilt = _base_tokens()
    rebuilt.extend(l + r for l, r in merges)
    if rebuilt != tokens:
        raise DataError(f"vocab file {path}: token table inconsistent with merges")
    return Vocab(merges=merges, tokens=tokens)
