"""Checkpoint directory format and snapshot loading.

Layout: <dir>/manifest.json plus one binary blob per named parameter.
Blob format (all little-endian):
    bytes 0-3   magic b"PGT1"
    bytes 4-7   uint32 rank
    bytes 8-11  uint32 dtype tag (0 = float32)
    bytes 12-15 uint32 reserved (zero)
    next        rank * uint64 extents
    rest        row-major float32 payload

Writes go to a sibling temp directory first and are renamed into place,
so a crash never leaves a half-written checkpoint behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config
from .corpus import AttributeVocabulary, Vocabulary
from .discriminators import AdvDiscriminator, AttDiscriminator
from .generator import Generator, NoiseSpec
from .nn import ParameterStore
from .rng import RandomSource, hash_seed

MAGIC = b"PGT1"
DTYPE_FLOAT32 = 0
MANIFEST = "manifest.json"


def _blob_name(param_name: str) -> str:
    return param_name + ".bin"


def write_blob(path, array: np.ndarray):
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", arr.ndim, DTYPE_FLOAT32, 0))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_blob(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        rank, dtype_tag, _ = struct.unpack("<III", fh.read(12))
        if dtype_tag != DTYPE_FLOAT32:
            raise ValueError(f"{path}: unsupported dtype tag {dtype_tag}")
        shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
        payload = fh.read()
    n = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(payload, dtype="<f4", count=n).reshape(shape)
    return arr.astype(np.float32, copy=True)


def _fingerprint(items) -> str:
    h = hashlib.sha256()
    for it in items:
        h.update(repr(it).encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()[:16]


def save_checkpoint(out_dir, store: ParameterStore, config: Config, vocab: Vocabulary,
                    attr_vocab: AttributeVocabulary, step: int, extra: dict | None = None):
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=out_dir.name + ".", dir=out_dir.parent))
    try:
        params = {}
        for name in store.names():
            arr = store[name].data
            write_blob(tmp / _blob_name(name), arr)
            params[name] = {"shape": list(arr.shape), "dtype": "float32"}
        manifest = {
            "format": "phredgan-checkpoint",
            "version": 1,
            "step": int(step),
            "config": config.to_dict(),
            "vocab": vocab.index_to_token,
            "attributes": attr_vocab.labels,
            "params": params,
            "fingerprints": {
                "vocab": _fingerprint(vocab.index_to_token),
                "attributes": _fingerprint(attr_vocab.labels),
            },
        }
        if extra:
            manifest["extra"] = extra
        (tmp / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        if out_dir.exists():
            shutil.rmtree(out_dir)
        os.replace(tmp, out_dir)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)
    return out_dir


def build_models(config: Config, vocab_size: int, n_attrs: int, init_seed: int):
    """Assemble generator + per-variant discriminators over one ParameterStore.

    Construction order is fixed (generator, adversarial, attribute) so a
    given seed always produces the same parameter layout.
    """
    store = ParameterStore(RandomSource(hash_seed(init_seed, "params")))
    gen = Generator(store, vocab_size, n_attrs, config.layers, config.hidden,
                    config.emb_dim, config.attr_dim, config.attn_dim,
                    attrs_enabled=config.attrs_enabled)
    dadv = None
    datt = None
    if config.uses_adv:
        dadv = AdvDiscriminator(store, gen.word_emb, gen.attr_emb, config.hidden,
                                config.layers, conditioned=config.adv_conditioned)
    if config.uses_att:
        datt = AttDiscriminator(store, gen.word_emb, n_attrs, config.hidden, config.layers)
    return store, gen, dadv, datt


@dataclass
class Snapshot:
    """A loaded, immutable checkpoint ready for inference."""

    config: Config
    vocab: Vocabulary
    attr_vocab: AttributeVocabulary
    store: ParameterStore
    generator: Generator
    dadv: AdvDiscriminator | None
    datt: AttDiscriminator | None
    step: int
    path: str

    def noise_spec(self, std: float | None = None) -> NoiseSpec:
        return NoiseSpec(self.config.noise_mode,
                         self.config.noise_std if std is None else std,
                         self.generator.noise_dim)


def load_checkpoint(path) -> Snapshot:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if manifest.get("format") != "phredgan-checkpoint":
        raise ValueError(f"{mpath}: not a checkpoint manifest")
    config = Config.from_dict(manifest["config"])
    vocab = Vocabulary(manifest["vocab"])
    attr_vocab = AttributeVocabulary(manifest["attributes"])
    store, gen, dadv, datt = build_models(config, len(vocab), len(attr_vocab), config.seed)
    state = {}
    for name, meta in manifest["params"].items():
        arr = read_blob(path / _blob_name(name))
        if list(arr.shape) != list(meta["shape"]):
            raise ValueError(f"{name}: blob shape {arr.shape} != manifest {meta['shape']}")
        state[name] = arr
    store.load_state(state)
    return Snapshot(config=config, vocab=vocab, attr_vocab=attr_vocab, store=store,
                    generator=gen, dadv=dadv, datt=datt, step=int(manifest["step"]),
                    path=str(path))
