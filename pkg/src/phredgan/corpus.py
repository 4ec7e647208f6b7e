"""Dialogue corpus ingestion, batching, and a synthetic persona corpus.

On-disk formats:
  - dialogue file: UTF-8 JSON lines, one conversation per line:
      {"id": str, "turns": [{"speaker": str, "text": str}, ...]}
  - attribute vocabulary file: one label per line, line number = index
  - synthetic manifest: JSON with the attribute -> signature-token map
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import RandomSource, hash_seed

PAD, UNK, EOS, BOS = 0, 1, 2, 3
RESERVED = ["<pad>", "<unk>", "<eos>", "<bos>"]

_TOKEN_RE = re.compile(r"<pad>|<unk>|<eos>|<bos>|\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, punctuation as separate tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Bijective token<->index map with fixed reserved entries."""

    def __init__(self, tokens: list[str]):
        if tokens[: len(RESERVED)] != RESERVED:
            raise ValueError(f"vocabulary must start with reserved entries {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.index_to_token = list(tokens)
        self.token_to_index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.index_to_token)

    def encode(self, toks: list[str]) -> list[int]:
        get = self.token_to_index.get
        return [get(t, UNK) for t in toks]

    def decode(self, ids, strip_special: bool = True) -> str:
        words = []
        for i in ids:
            i = int(i)
            if strip_special and i in (PAD, EOS, BOS):
                continue
            words.append(self.index_to_token[i])
        return " ".join(words)

    @classmethod
    def build(cls, counts: Counter, max_size: int) -> "Vocabulary":
        budget = max(0, max_size - len(RESERVED))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        kept = [t for t, _ in ranked[:budget] if t not in RESERVED]
        return cls(RESERVED + kept)


class AttributeVocabulary:
    """Label<->index map for per-utterance attributes; no reserved entries."""

    def __init__(self, labels: list[str]):
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate attribute labels")
        if not labels:
            raise ValueError("attribute vocabulary is empty")
        self.labels = list(labels)
        self._index = {l: i for i, l in enumerate(labels)}

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def index(self, label: str) -> int:
        if label not in self._index:
            raise KeyError(f"unknown attribute label {label!r}; known: {self.labels}")
        return self._index[label]

    @classmethod
    def load(cls, path) -> "AttributeVocabulary":
        labels = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        return cls(labels)

    def save(self, path):
        Path(path).write_text("".join(l + "\n" for l in self.labels), encoding="utf-8")


@dataclass
class Turn:
    attribute_id: int
    tokens: list[int]

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass
class Conversation:
    id: str
    turns: list[Turn]


@dataclass
class IngestReport:
    conversations: int = 0
    dropped_empty_turns: int = 0
    rejected_conversations: list[str] = field(default_factory=list)
    total_tokens: int = 0
    unk_tokens: int = 0

    @property
    def oov_rate(self) -> float:
        return self.unk_tokens / self.total_tokens if self.total_tokens else 0.0


PARITY_LABELS = ["questioner", "helper"]


def _read_raw(path):
    raw = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno + 1}: invalid JSON line: {e}") from e
            raw.append(obj)
    return raw


def ingest(path, vocab_size: int = 2000, attr_vocab: AttributeVocabulary | None = None,
           vocab: Vocabulary | None = None, strict_attributes: bool = False):
    """Read a dialogue file into indexed conversations.

    When `vocab` is None a vocabulary is built from this file (top
    `vocab_size` tokens, remainder to UNK); pass the training vocabulary
    for validation/test files. When `attr_vocab` is None, UDC-style parity
    labeling assigns the first turn of every conversation to
    "questioner" and alternates. With `strict_attributes` an unknown
    speaker raises instead of rejecting the conversation (the eval-time
    contract: there is no UNK attribute).

    Returns (conversations, vocab, attr_vocab, report).
    """
    raw = _read_raw(path)
    report = IngestReport()
    parity = attr_vocab is None
    if parity:
        attr_vocab = AttributeVocabulary(PARITY_LABELS)

    tokenized = []
    for idx, obj in enumerate(raw):
        conv_id = str(obj.get("id", f"line{idx + 1}"))
        turns_in = obj.get("turns")
        if not isinstance(turns_in, list):
            report.rejected_conversations.append(conv_id)
            continue
        turns, ok = [], True
        kept = 0
        for turn in turns_in:
            text = turn.get("text", "")
            toks = tokenize(text)
            if not toks:
                report.dropped_empty_turns += 1
                continue
            if parity:
                attr = kept % len(PARITY_LABELS)
            else:
                speaker = turn.get("speaker")
                if isinstance(speaker, str) and len(speaker.split()) != 1:
                    ok = False  # one attribute token per utterance
                    break
                if speaker is None or speaker not in attr_vocab:
                    if strict_attributes:
                        raise KeyError(
                            f"conversation {conv_id}: unknown attribute label {speaker!r}; "
                            f"known: {attr_vocab.labels}"
                        )
                    ok = False  # dialogue/attribute records misaligned
                    break
                attr = attr_vocab.index(speaker)
            turns.append((attr, toks))
            kept += 1
        if not ok or len(turns) < 2:
            report.rejected_conversations.append(conv_id)
            continue
        tokenized.append((conv_id, turns))

    if vocab is None:
        counts = Counter()
        for _, turns in tokenized:
            for _, toks in turns:
                counts.update(toks)
        vocab = Vocabulary.build(counts, vocab_size)

    conversations = []
    for conv_id, turns in tokenized:
        enc_turns = []
        for attr, toks in turns:
            ids = vocab.encode(toks)
            report.total_tokens += len(ids)
            report.unk_tokens += sum(1 for i in ids if i == UNK)
            enc_turns.append(Turn(attribute_id=attr, tokens=ids))
        conversations.append(Conversation(id=conv_id, turns=enc_turns))
    report.conversations = len(conversations)
    return conversations, vocab, attr_vocab, report


def write_dialogue_file(path, conversations: list[Conversation], vocab: Vocabulary,
                        attr_vocab: AttributeVocabulary):
    """Inverse of ingest for round-tripping: tokens back to surface text."""
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            obj = {
                "id": conv.id,
                "turns": [
                    {
                        "speaker": attr_vocab.labels[t.attribute_id],
                        "text": " ".join(vocab.index_to_token[i] for i in t.tokens),
                    }
                    for t in conv.turns
                ],
            }
            fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# batching


@dataclass
class TurnBatch:
    tokens: np.ndarray       # (B, T) int32, PAD-filled, EOS-terminated
    lengths: np.ndarray      # (B,) int32 true lengths incl. EOS; 0 for padded turns
    mask: np.ndarray         # (B, T) float32, 1 iff position < length
    source_attr: np.ndarray  # (B,) int32 c_i
    target_attr: np.ndarray  # (B,) int32 c_{i+1}; 0 on the final turn (never consumed)
    turn_mask: np.ndarray    # (B,) float32, 1 iff the conversation really has this turn


@dataclass
class Batch:
    turns: list[TurnBatch]
    conv_ids: list[str]

    @property
    def size(self) -> int:
        return len(self.conv_ids)


def _clip_tokens(tokens: list[int], max_len: int) -> list[int]:
    return tokens[: max_len - 1] + [EOS]


def make_batches(conversations: list[Conversation], batch_size: int, max_turns: int,
                 max_len: int, seed: int, epoch: int = 0) -> list[Batch]:
    """Deterministically shuffled mini-batches; a batch shares its turn count."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = RandomSource(hash_seed(seed, "batches", epoch)).permutation(len(conversations))
    shuffled = [conversations[i] for i in order]
    batches = []
    for lo in range(0, len(shuffled), batch_size):
        group = shuffled[lo: lo + batch_size]
        n_turns = min(max_turns, max(len(c.turns) for c in group))
        B = len(group)
        turns = []
        for t in range(n_turns):
            rows = [(_clip_tokens(c.turns[t].tokens, max_len) if t < len(c.turns) else [])
                    for c in group]
            Tmax = max(1, max(len(r) for r in rows))
            tok = np.zeros((B, Tmax), dtype=np.int32)
            lengths = np.zeros(B, dtype=np.int32)
            src = np.zeros(B, dtype=np.int32)
            tgt = np.zeros(B, dtype=np.int32)
            tmask = np.zeros(B, dtype=np.float32)
            for b, c in enumerate(group):
                if t >= len(c.turns):
                    continue
                r = rows[b]
                tok[b, : len(r)] = r
                lengths[b] = len(r)
                src[b] = c.turns[t].attribute_id
                tmask[b] = 1.0
                if t + 1 < len(c.turns):
                    tgt[b] = c.turns[t + 1].attribute_id
            mask = (np.arange(Tmax)[None, :] < lengths[:, None]).astype(np.float32)
            turns.append(TurnBatch(tok, lengths, mask, src, tgt, tmask))
        batches.append(Batch(turns=turns, conv_ids=[c.id for c in group]))
    return batches


# ---------------------------------------------------------------------------
# synthetic persona corpus

FILLER_TOKENS = [f"thing{i}" for i in range(10)]
SIGNATURE_BLOCK = 6
MAX_SIGNATURE_ATTRS = 12


def synthetic_labels(n_attrs: int) -> list[str]:
    if n_attrs == 2:
        return list(PARITY_LABELS)
    return [f"speaker{k}" for k in range(n_attrs)]


def generate_synthetic_persona_corpus(out_dir, n_convs: int, n_attrs: int,
                                      signature_rate: float, seed: int,
                                      turns_range=(3, 5), len_range=(4, 7)) -> dict:
    """Write an attribute-signature corpus for verifying persona conditioning.

    Attribute k emits tokens from its private signature block with
    probability `signature_rate` per position and shared filler tokens
    otherwise. Speakers alternate cyclically, with the starting attribute
    rotating per conversation. Splits 90/5/5 into train/valid/test.
    """
    if n_attrs < 2:
        raise ValueError("n_attrs must be >= 2")
    if n_attrs > MAX_SIGNATURE_ATTRS:
        raise ValueError(f"n_attrs exceeds available signature blocks ({MAX_SIGNATURE_ATTRS})")
    if not (0.0 < signature_rate <= 1.0):
        raise ValueError("signature_rate must be in (0, 1]")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = synthetic_labels(n_attrs)
    signatures = {
        labels[k]: [f"sig{k}w{j}" for j in range(SIGNATURE_BLOCK)] for k in range(n_attrs)
    }
    rng = RandomSource(hash_seed(seed, "synthetic"))

    convs = []
    for ci in range(n_convs):
        n_turns = turns_range[0] + int(rng.integers(1, turns_range[1] - turns_range[0] + 1)[0])
        start = ci % n_attrs
        turns = []
        for t in range(n_turns):
            attr = (start + t) % n_attrs
            n_tok = len_range[0] + int(rng.integers(1, len_range[1] - len_range[0] + 1)[0])
            words = []
            for _ in range(n_tok):
                if rng.uniform(1)[0] <= signature_rate:
                    j = int(rng.integers(1, SIGNATURE_BLOCK)[0])
                    words.append(signatures[labels[attr]][j])
                else:
                    words.append(FILLER_TOKENS[int(rng.integers(1, len(FILLER_TOKENS))[0])])
            turns.append({"speaker": labels[attr], "text": " ".join(words)})
        convs.append({"id": f"synth{ci:05d}", "turns": turns})

    n_valid = max(1, n_convs // 20)
    n_test = max(1, n_convs // 20)
    n_train = n_convs - n_valid - n_test
    splits = {
        "train.jsonl": convs[:n_train],
        "valid.jsonl": convs[n_train: n_train + n_valid],
        "test.jsonl": convs[n_train + n_valid:],
    }
    for name, items in splits.items():
        with open(out / name, "w", encoding="utf-8") as fh:
            for obj in items:
                fh.write(json.dumps(obj) + "\n")
    AttributeVocabulary(labels).save(out / "attributes.txt")
    manifest = {
        "signatures": signatures,
        "signature_rate": signature_rate,
        "seed": seed,
        "n_convs": n_convs,
        "filler": FILLER_TOKENS,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest
