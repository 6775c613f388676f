"""Complete classifiers: T-E-GRU and the recurrent / attention baseline zoo."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from . import nn
from . import tensor as T
from .textpipe import PAD_ID, EmbeddingTable, EncodedBatch
from .tensor import Rng, Tensor


class ConfigError(ValueError):
    """Invalid or inconsistent model configuration."""


class CheckpointError(Exception):
    pass


class IntegrityError(CheckpointError):
    """The checkpoint is truncated, corrupted or not a checkpoint at all."""


class ConfigMismatchError(CheckpointError):
    """The checkpoint does not match the vocabulary or format it is loaded against."""


class ModelKind(str, Enum):
    TEGRU = "TEGRU"
    TERNN = "TERNN"
    TELSTM = "TELSTM"
    TEBiRNN = "TEBiRNN"
    TEBiLSTM = "TEBiLSTM"
    TEBiGRU = "TEBiGRU"
    RNN = "RNN"
    LSTM = "LSTM"
    GRU = "GRU"
    BiRNN = "BiRNN"
    BiLSTM = "BiLSTM"
    BiGRU = "BiGRU"
    RNNAtt = "RNNAtt"
    LSTMAtt = "LSTMAtt"
    GRUAtt = "GRUAtt"
    AttRNN = "AttRNN"
    AttLSTM = "AttLSTM"
    AttGRU = "AttGRU"
    BiRNNAtt = "BiRNNAtt"
    BiLSTMAtt = "BiLSTMAtt"
    BiGRUAtt = "BiGRUAtt"

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        key = name.strip().replace("-", "").replace("_", "").lower()
        key = key.replace("attention", "att")
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ConfigError(f"unknown model kind {name!r}; expected one of {[k.value for k in cls]}")

    @property
    def encoder(self) -> bool:
        return self.value.startswith("TE")

    @property
    def _core(self) -> str:
        core = self.value[2:] if self.encoder else self.value
        return core.removeprefix("Att").removesuffix("Att")

    @property
    def bidirectional(self) -> bool:
        return self._core.startswith("Bi")

    @property
    def cell(self) -> str:
        return self._core.removeprefix("Bi")

    @property
    def attention(self) -> str | None:
        if self.value.startswith("Att"):
            return "before"
        if self.value.endswith("Att"):
            return "after"
        return None

    @property
    def display(self) -> str:
        """Row label in the style of the result tables, e.g. ``T-E-BiGRU``."""
        core = self._core if not self.bidirectional or self.attention else f"Bi-{self.cell}"
        if self.encoder:
            return f"T-E-{self._core}"
        if self.attention == "before":
            return f"Attention-{core}"
        if self.attention == "after":
            return f"{core}-Attention"
        return core


@dataclass
class ModelConfig:
    """Architecture description; defaults match the full-size movie-review setup."""

    kind: ModelKind = ModelKind.TEGRU
    d_model: int = 300
    max_len: int = 100
    n_heads: int = 2
    d_ff: int = 2048
    encoder_layers: int = 1
    recurrent_hidden: int = 256
    dropout: float = 0.3
    trainable_embeddings: bool = True
    paper_exact_gru: bool = False
    shared_identity_attention: bool = False
    attention_mask: bool = False
    pooling: str = "final"
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.kind, ModelKind):
            self.kind = ModelKind.parse(str(self.kind))

    def validate(self) -> "ModelConfig":
        for name in ("d_model", "max_len", "recurrent_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kind.encoder:
            if self.n_heads < 1 or self.d_model % self.n_heads:
                raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
            if self.d_ff < 1 or self.encoder_layers < 1:
                raise ConfigError("d_ff and encoder_layers must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kind.bidirectional and self.recurrent_hidden % 2:
            raise ConfigError(f"bidirectional kinds need an even recurrent_hidden, got {self.recurrent_hidden}")
        if self.pooling not in ("final", "mean"):
            raise ConfigError(f"pooling must be 'final' or 'mean', got {self.pooling!r}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**d)


@dataclass
class Model(nn.Params):
    """Parameters of one classifier plus the config that shapes its forward pass."""

    config: ModelConfig
    embedding: Tensor
    encoders: list
    recurrent: nn.Params
    attention: nn.AttentionPoolParams | None
    head: nn.HeadParams
    vocab_hash: str | None = field(default=None, compare=False)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    def trainable(self) -> list[Tensor]:
        return [t for t in self.tensors() if t.requires_grad]

    def forward(self, batch, training: bool = False, rng: Rng | None = None) -> Tensor:
        """Log-probabilities ``[b, 2]`` for an index matrix or :class:`EncodedBatch`."""
        ids = batch.ids if isinstance(batch, EncodedBatch) else np.asarray(batch)
        cfg, kind = self.config, self.config.kind
        x = T.embedding(self.embedding, ids, padding_idx=PAD_ID)
        if kind.encoder:
            mask = ids == PAD_ID if cfg.attention_mask else None
            for block in self.encoders:
                x = nn.encoder_block(x, block, training, rng, mask)
            x = T.dropout(x, cfg.dropout, rng, training)
        if kind.attention == "before":
            x = nn.attention_scale(x, self.attention)
        states, final = nn.run_recurrent(x, kind.cell, kind.bidirectional, self.recurrent)
        if kind.attention == "after":
            h = nn.attention_pool(states, self.attention)
        elif cfg.pooling == "mean":
            h = T.mean(states, axis=1)
        else:
            h = final
        return nn.classify_head(h, self.head.w, self.head.b)

    __call__ = forward

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        if set(own) != set(state):
            raise ConfigMismatchError(f"parameter names differ: {sorted(set(own) ^ set(state))}")
        for name, t in own.items():
            if t.shape != state[name].shape:
                raise ConfigMismatchError(f"{name}: shape {state[name].shape} != {t.shape}")
            t.data = np.array(state[name], dtype=t.dtype)

    def clone(self) -> "Model":
        return copy.deepcopy(self)


def build(config: ModelConfig, emb: EmbeddingTable) -> Model:
    """Initialise every parameter of ``config.kind`` from ``config.seed``."""
    config.validate()
    if emb.dim != config.d_model:
        raise ConfigError(f"embedding dimension {emb.dim} != d_model {config.d_model}")
    kind = config.kind
    rng = Rng(config.seed)
    dtype = T.get_default_dtype()

    table = np.array(emb.vectors, dtype=dtype)
    table[PAD_ID] = 0
    embedding = Tensor(table, requires_grad=config.trainable_embeddings)

    encoders = []
    if kind.encoder:
        encoders = [
            nn.EncoderBlockParams.init(rng, config.d_model, config.n_heads, config.d_ff,
                                       config.dropout, config.shared_identity_attention)
            for _ in range(config.encoder_layers)
        ]
    attention = None
    if kind.attention == "before":
        attention = nn.AttentionPoolParams.init(rng, config.d_model)
    bias = not (kind.cell == "GRU" and config.paper_exact_gru)
    recurrent = nn.init_recurrent(rng, kind.cell, config.d_model, config.recurrent_hidden,
                                  kind.bidirectional, bias)
    if kind.attention == "after":
        attention = nn.AttentionPoolParams.init(rng, config.recurrent_hidden)
    head = nn.HeadParams.init(rng, config.recurrent_hidden)
    return Model(config, embedding, encoders, recurrent, attention, head)


# -- checkpoints -------------------------------------------------------------------

MAGIC = b"TEGRU-CKPT\n"
FORMAT_VERSION = 1
_DIGEST = 32


def save(model: Model, path) -> None:
    """Write a self-describing checkpoint: header JSON, raw tensors, sha256 trailer."""
    entries, blobs = [], []
    for name, t in model.named_tensors():
        data = np.ascontiguousarray(t.data, dtype=t.dtype.newbyteorder("<"))
        entries.append({"name": name, "shape": list(t.shape), "dtype": t.dtype.name})
        blobs.append(data.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab_size": model.vocab_size,
        "vocab_hash": model.vocab_hash,
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    os.replace(tmp, path)


def load(path, vocab_size: int | None = None, vocab_hash: str | None = None) -> Model:
    """Read a checkpoint; nothing is constructed unless the whole file verifies."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 + _DIGEST or not raw.startswith(MAGIC):
        raise IntegrityError(f"{path}: not a checkpoint file")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (truncated or corrupted)")
    (hlen,) = struct.unpack_from("<Q", body, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ConfigMismatchError(f"{path}: format version {header.get('format_version')} != {FORMAT_VERSION}")
    if vocab_size is not None and header["vocab_size"] != vocab_size:
        raise ConfigMismatchError(
            f"{path}: checkpoint vocabulary has {header['vocab_size']} entries, expected {vocab_size}"
        )
    if vocab_hash is not None and header["vocab_hash"] not in (None, vocab_hash):
        raise ConfigMismatchError(f"{path}: checkpoint was trained on a different vocabulary")

    state, offset = {}, start + hlen
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        n = int(np.prod(entry["shape"], dtype=np.int64)) * dt.itemsize
        if offset + n > len(body):
            raise IntegrityError(f"{path}: tensor data shorter than declared")
        state[entry["name"]] = np.frombuffer(body, dtype=dt, count=n // dt.itemsize,
                                             offset=offset).reshape(entry["shape"])
        offset += n
    if offset != len(body):
        raise IntegrityError(f"{path}: {len(body) - offset} unexpected trailing bytes")

    config = ModelConfig.from_dict(header["config"])
    dtype = np.dtype(header["tensors"][0]["dtype"]).type if header["tensors"] else np.float32
    with T.default_dtype(dtype):
        model = build(config, EmbeddingTable(np.zeros((header["vocab_size"], config.d_model)), 0.0))
    model.load_state_dict(state)
    model.vocab_hash = header["vocab_hash"]
    return model
