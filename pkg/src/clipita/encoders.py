"""Toy dual encoder: a patch-based image tower and a token-based text tower,
each followed by a linear projection into a shared embedding space.

Image tower: patchify -> linear patch embedding -> mean-pool -> 2-layer MLP.
Text tower:  token embedding lookup -> mean-pool -> 2-layer MLP.

Mean pooling makes the text tower a bag of words; token order is ignored.
"""

from __future__ import annotations

import dataclasses
import json
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from clipita import tensor as T
from clipita.tensor import Tensor

MAX_TOKENS_CAP = 96
UNK = "<unk>"
GROUPS = ("image_tower", "text_tower", "image_proj", "text_proj")

# parameter name -> freeze group
PARAM_GROUPS = {
    "img_patch": "image_tower",
    "img_w1": "image_tower",
    "img_b1": "image_tower",
    "img_w2": "image_tower",
    "img_b2": "image_tower",
    "txt_embed": "text_tower",
    "txt_w1": "text_tower",
    "txt_b1": "text_tower",
    "txt_w2": "text_tower",
    "txt_b2": "text_tower",
    "img_proj": "image_proj",
    "txt_proj": "text_proj",
}

CHECKPOINT_MAGIC = b"CLIPITA\0"
CHECKPOINT_VERSION = 1

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class ConfigError(ValueError):
    pass


class EmptyCaptionError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    patch_size: int = 8
    image_size: int = 32
    vocab_size: int = 8192
    max_tokens: int = MAX_TOKENS_CAP
    hidden_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if not 1 <= self.max_tokens <= MAX_TOKENS_CAP:
            raise ConfigError(f"max_tokens must be in [1, {MAX_TOKENS_CAP}], got {self.max_tokens}")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be >= 2")
        if self.hidden_dim < 1 or self.vocab_size < 1:
            raise ConfigError("hidden_dim and vocab_size must be positive")

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


@dataclass(frozen=True)
class TokenizedCaption:
    ids: tuple[int, ...]
    text: str


# ------------------------------------------------------------------ vocab

def split_words(caption: str) -> list[str]:
    return _TOKEN_RE.findall(caption.lower())


def build_vocab(captions: Iterable[str], max_size: int = 8192) -> dict[str, int]:
    """Top-``max_size`` words by frequency (ties alphabetical), UNK at id 0."""
    counts = Counter(w for c in captions for w in split_words(c))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: max_size - 1]
    vocab = {UNK: 0}
    for word, _ in ranked:
        vocab[word] = len(vocab)
    return vocab


def tokenize(caption: str, vocab: Mapping[str, int], max_tokens: int = MAX_TOKENS_CAP,
             unk_token: str = UNK) -> TokenizedCaption:
    if unk_token not in vocab:
        raise KeyError(f"vocab has no unknown-token entry {unk_token!r}")
    words = split_words(caption)
    if not words:
        raise EmptyCaptionError(f"caption has no tokens: {caption!r}")
    unk = vocab[unk_token]
    ids = tuple(vocab.get(w, unk) for w in words[:max_tokens])
    return TokenizedCaption(ids, caption)


# ----------------------------------------------------------------- params

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class ModelParams:
    """Weights by name plus freeze flags per group.

    Arrays are never mutated in place; the optimizer swaps in new arrays.
    """

    config: ModelConfig
    arrays: dict[str, np.ndarray]
    vocab: dict[str, int]
    frozen: dict[str, bool] = field(default_factory=lambda: {g: False for g in GROUPS})

    def group_of(self, name: str) -> str:
        return PARAM_GROUPS[name]

    def is_frozen(self, name: str) -> bool:
        return self.frozen[PARAM_GROUPS[name]]

    def names(self, group: str | None = None) -> list[str]:
        return [n for n in PARAM_GROUPS if group is None or PARAM_GROUPS[n] == group]

    def group_bytes(self, group: str) -> bytes:
        """Byte serialization of one group, used to check freeze contracts."""
        return b"".join(np.ascontiguousarray(self.arrays[n], dtype="<f8").tobytes()
                        for n in self.names(group))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()},
                           dict(self.vocab), dict(self.frozen))


def init_params(config: ModelConfig, vocab: Mapping[str, int]) -> ModelParams:
    if len(vocab) > config.vocab_size:
        raise ConfigError(f"vocab has {len(vocab)} entries, config allows {config.vocab_size}")
    config = dataclasses.replace(config, vocab_size=len(vocab))
    rng = np.random.default_rng(config.seed)
    H, E, V = config.hidden_dim, config.embed_dim, len(vocab)
    arrays = {
        "img_patch": _glorot(rng, config.patch_dim, H),
        "img_w1": _glorot(rng, H, H),
        "img_b1": np.zeros(H),
        "img_w2": _glorot(rng, H, H),
        "img_b2": np.zeros(H),
        "txt_embed": _glorot(rng, V, H),
        "txt_w1": _glorot(rng, H, H),
        "txt_b1": np.zeros(H),
        "txt_w2": _glorot(rng, H, H),
        "txt_b2": np.zeros(H),
        "img_proj": _glorot(rng, H, E),
        "txt_proj": _glorot(rng, H, E),
    }
    return ModelParams(config, arrays, dict(vocab))


def set_frozen(params: ModelParams, **flags: bool) -> ModelParams:
    """Return params (sharing weight arrays) with updated freeze flags.

    Unknown group names raise. Groups not mentioned keep their flag.
    """
    unknown = set(flags) - set(GROUPS)
    if unknown:
        raise KeyError(f"unknown parameter groups: {sorted(unknown)}")
    frozen = dict(params.frozen)
    frozen.update({k: bool(v) for k, v in flags.items()})
    return ModelParams(params.config, dict(params.arrays), params.vocab, frozen)


def bind(params: ModelParams, tape: T.Tape | None = None) -> dict[str, Tensor]:
    """Weights as tensors; unfrozen ones are watched on ``tape`` if given."""
    out = {}
    for name, arr in params.arrays.items():
        if tape is not None and not params.is_frozen(name):
            out[name] = tape.watch(arr)
        else:
            out[name] = Tensor(arr)
    return out


# ---------------------------------------------------------------- forward

def patchify(pixels: np.ndarray, config: ModelConfig) -> np.ndarray:
    """(H, W, 3) or (B, H, W, 3) -> (B * num_patches, patch_dim)."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    s, p = config.image_size, config.patch_size
    if x.ndim != 4 or x.shape[1:] != (s, s, 3):
        raise T.DimensionError(f"expected images of shape ({s}, {s}, 3), got {x.shape[-3:]}")
    b, g = x.shape[0], s // p
    x = x.reshape(b, g, p, g, p, 3).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b * g * g, p * p * 3)


def _mlp(x: Tensor, w: Mapping[str, Tensor], prefix: str) -> Tensor:
    h = T.tanh(T.add_row(T.matmul(x, w[prefix + "_w1"]), w[prefix + "_b1"]))
    return T.add_row(T.matmul(h, w[prefix + "_w2"]), w[prefix + "_b2"])


def _pool_matrix(sizes: Sequence[int]) -> np.ndarray:
    pool = np.zeros((len(sizes), int(sum(sizes))))
    start = 0
    for i, n in enumerate(sizes):
        pool[i, start:start + n] = 1.0 / n
        start += n
    return pool


def image_tower(weights: Mapping[str, Tensor], config: ModelConfig, images: np.ndarray) -> Tensor:
    patches = patchify(images, config)
    b = patches.shape[0] // config.num_patches
    embedded = T.tanh(T.matmul(patches, weights["img_patch"]))
    pooled = T.matmul(_pool_matrix([config.num_patches] * b), embedded)
    return _mlp(pooled, weights, "img")


def text_tower(weights: Mapping[str, Tensor], captions: Sequence[TokenizedCaption]) -> Tensor:
    sizes = [len(c.ids) for c in captions]
    if not captions or min(sizes) == 0:
        raise EmptyCaptionError("text encoder needs non-empty token lists")
    ids = [i for c in captions for i in c.ids]
    embedded = T.gather_rows(weights["txt_embed"], ids)
    pooled = T.matmul(_pool_matrix(sizes), embedded)
    return _mlp(pooled, weights, "txt")


def encode_images(params: ModelParams, images: np.ndarray,
                  weights: Mapping[str, Tensor] | None = None) -> Tensor:
    """Batch of (B, H, W, 3) images in [0, 1] -> (B, embed_dim)."""
    w = bind(params) if weights is None else weights
    return T.matmul(image_tower(w, params.config, images), w["img_proj"])


def encode_texts(params: ModelParams, captions: Sequence[TokenizedCaption],
                 weights: Mapping[str, Tensor] | None = None) -> Tensor:
    w = bind(params) if weights is None else weights
    return T.matmul(text_tower(w, captions), w["txt_proj"])


def encode_image(params: ModelParams, pixels: np.ndarray,
                 weights: Mapping[str, Tensor] | None = None) -> Tensor:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3:
        raise T.DimensionError(f"encode_image takes one (H, W, 3) image, got {pixels.shape}")
    return encode_images(params, pixels[None], weights)


def encode_text(params: ModelParams, tokens: TokenizedCaption,
                weights: Mapping[str, Tensor] | None = None) -> Tensor:
    return encode_texts(params, [tokens], weights)


# ------------------------------------------------------------- checkpoint

def save_checkpoint(path: str | Path, params: ModelParams,
                    extra_arrays: Mapping[str, np.ndarray] | None = None,
                    extra_meta: Mapping | None = None) -> Path:
    """Write a sectioned binary checkpoint.

    Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header,
    then float64 little-endian array payloads in header order. Model arrays
    live in the ``model`` section, anything in ``extra_arrays`` (optimizer
    state) in the ``optimizer`` section.
    """
    entries, blobs, offset = [], [], 0
    sections = [("model", params.arrays), ("optimizer", extra_arrays or {})]
    for section, arrays in sections:
        for name in sorted(arrays):
            blob = np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
            entries.append({"section": section, "name": name, "shape": list(np.shape(arrays[name])),
                            "offset": offset, "nbytes": len(blob)})
            blobs.append(blob)
            offset += len(blob)
    vocab_list = [w for w, _ in sorted(params.vocab.items(), key=lambda kv: kv[1])]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(params.config),
        "frozen": params.frozen,
        "vocab": vocab_list,
        "arrays": entries,
        "meta": dict(extra_meta or {}),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    return path


@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: dict[str, np.ndarray]
    meta: dict


def _read(path: str | Path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    return header, data[16 + n:]


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, payload = _read(path)
    model, opt = {}, {}
    for e in header["arrays"]:
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(e["shape"])
        (model if e["section"] == "model" else opt)[e["name"]] = arr
    vocab = {w: i for i, w in enumerate(header["vocab"])}
    params = ModelParams(ModelConfig(**header["config"]), model, vocab, dict(header["frozen"]))
    return Checkpoint(params, opt, header["meta"])


def checkpoint_group_bytes(path: str | Path, group: str) -> bytes:
    """Raw payload bytes of one parameter group, read straight from disk."""
    header, payload = _read(path)
    names = [n for n in PARAM_GROUPS if PARAM_GROUPS[n] == group]
    by_name = {e["name"]: e for e in header["arrays"] if e["section"] == "model"}
    return b"".join(payload[by_name[n]["offset"]:by_name[n]["offset"] + by_name[n]["nbytes"]]
                    for n in names)
