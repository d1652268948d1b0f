"""The sequence-embedding network and its checkpoint format.

Architecture: training-time frame dropout (zero-masking whole frames, so
tensor shapes stay static and the inference path is identical in train
and eval) -> GRU -> sinusoidal positional encoding -> transformer
encoder -> mean pooling over sequence positions -> two fully connected
layers -> L2-normalized embedding.

Checkpoints (magic ``MDCK1``) are self-describing: a length-prefixed JSON
header carries the model configuration, the feature standardizer, and the
pipeline constants (fps, window length), followed by raw little-endian
float32 tensor payloads in header directory order. Loading needs no
external configuration and reproduces forward outputs bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .encoding import N_FEATURES, Standardizer
from .errors import ConfigurationError, DataFormatError, InvalidInputError

_CHECKPOINT_MAGIC = b"MDCK1"


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 64
    gru_layers: int = 1
    gru_hidden: int = 64
    tf_layers: int = 2
    tf_heads: int = 4
    tf_ff_dim: int = 128
    frame_dropout_p: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.embedding_dim < 2:
            raise ConfigurationError(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        for name in ("gru_layers", "gru_hidden", "tf_layers", "tf_heads", "tf_ff_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.gru_hidden % self.tf_heads != 0:
            raise ConfigurationError(
                f"tf_heads ({self.tf_heads}) must divide gru_hidden ({self.gru_hidden})")
        if not 0.0 <= self.frame_dropout_p < 1.0:
            raise ConfigurationError("frame_dropout_p must be in [0, 1)")


def _sinusoidal_encoding(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angles = pos / torch.pow(10000.0, i / dim)
    enc = torch.zeros(length, dim, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(angles)
    enc[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return enc


class MotionEmbedder(nn.Module):
    """GRU + transformer encoder mapping (B, L, 18) windows to unit embeddings."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        width = config.gru_hidden
        self.gru = nn.GRU(N_FEATURES, width, num_layers=config.gru_layers,
                          batch_first=True)
        layer = nn.TransformerEncoderLayer(
            d_model=width, nhead=config.tf_heads, dim_feedforward=config.tf_ff_dim,
            dropout=0.0, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, config.tf_layers,
                                             enable_nested_tensor=False)
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, config.embedding_dim)
        self._pos_cache: torch.Tensor | None = None

    def _positional(self, length: int, dtype, device) -> torch.Tensor:
        cache = self._pos_cache
        if cache is None or cache.shape[0] < length or cache.dtype != dtype:
            cache = _sinusoidal_encoding(length, self.config.gru_hidden).to(dtype=dtype)
            self._pos_cache = cache
        return cache[:length].to(device)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[-1] != N_FEATURES:
            raise InvalidInputError(f"expected (batch, length, {N_FEATURES}) input, "
                                    f"got {tuple(x.shape)}")
        h, _ = self.gru(x)
        h = h + self._positional(h.shape[1], h.dtype, h.device)
        h = self.encoder(h)
        h = h.mean(dim=1)
        h = torch.relu(self.fc1(h))
        h = self.fc2(h)
        return nn.functional.normalize(h, dim=-1, eps=1e-12)


def init_model(config: ModelConfig) -> MotionEmbedder:
    """Build a model with deterministic uniform fan-in initialization.

    Weight matrices draw from U(-1/sqrt(fan_in), +1/sqrt(fan_in)) using a
    generator seeded from config.seed; biases start at zero and
    normalization gains at one. Parameter order is module definition
    order, so equal seeds give bit-identical weights.
    """
    model = MotionEmbedder(config)
    gen = torch.Generator().manual_seed(config.seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "norm" in name:
                if name.endswith("weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()
            elif p.dim() >= 2:
                bound = 1.0 / math.sqrt(p.shape[-1])
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()
    model.eval()
    return model


def frame_dropout(window: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Zero out whole frames independently with probability p (training only)."""
    window = np.asarray(window)
    if window.ndim != 2:
        raise InvalidInputError("frame_dropout expects a (length, features) window")
    out = window.copy()
    if p <= 0.0:
        return out
    mask = rng.random(window.shape[0]) < p
    out[mask] = 0.0
    return out


def forward(model: MotionEmbedder, window: np.ndarray) -> np.ndarray:
    """Evaluation-mode embedding of one window; deterministic, unit norm."""
    window = np.asarray(window, dtype=np.float32)
    if window.ndim != 2 or window.shape[1] != N_FEATURES:
        raise InvalidInputError(f"expected (length, {N_FEATURES}) window, got {window.shape}")
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(window[None]))
    return out[0].numpy()


def embed_windows(model: MotionEmbedder, windows: np.ndarray) -> np.ndarray:
    """Embed many windows one at a time.

    Batch size is pinned to 1 so streaming and batch evaluation produce
    bit-identical embeddings (CPU GEMM results vary with batch shape).
    """
    windows = np.asarray(windows, dtype=np.float32)
    if windows.ndim != 3:
        raise InvalidInputError("expected (n, length, features) array")
    return np.stack([forward(model, w) for w in windows]) if len(windows) else \
        np.zeros((0, model.config.embedding_dim), dtype=np.float32)


def backward(model: MotionEmbedder, loss: torch.Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every trainable parameter."""
    model.zero_grad(set_to_none=True)
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        grads[name] = (p.grad.detach().clone().numpy() if p.grad is not None
                       else np.zeros(tuple(p.shape), dtype=np.float32))
    return grads


@dataclass
class TrainState:
    epochs_completed: int = 0
    best_val_precision_at_1: float = 0.0


@dataclass
class Checkpoint:
    """Everything needed to reproduce inference: config, weights, preprocessing."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]
    standardizer: Standardizer
    fps: float
    window_len: int
    train_state: TrainState = field(default_factory=TrainState)

    def build_model(self) -> MotionEmbedder:
        model = MotionEmbedder(self.config)
        state = {}
        for name, p in model.named_parameters():
            if name not in self.tensors:
                raise DataFormatError(f"checkpoint missing tensor {name}")
            arr = self.tensors[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise DataFormatError(
                    f"checkpoint tensor {name} has shape {arr.shape}, expected {tuple(p.shape)}")
            state[name] = torch.from_numpy(arr.copy())
        model.load_state_dict(state)
        model.eval()
        return model


def checkpoint_from_model(model: MotionEmbedder, standardizer: Standardizer,
                          fps: float, window_len: int,
                          train_state: TrainState | None = None) -> Checkpoint:
    tensors = {name: p.detach().clone().numpy().astype(np.float32)
               for name, p in model.named_parameters()}
    return Checkpoint(config=model.config, tensors=tensors, standardizer=standardizer,
                      fps=fps, window_len=window_len,
                      train_state=train_state or TrainState())


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = list(ckpt.tensors)
    header = {
        "config": asdict(ckpt.config),
        "standardizer": {
            "mean": [float(v) for v in ckpt.standardizer.mean],
            "std": [float(v) for v in ckpt.standardizer.std],
        },
        "pipeline": {"fps": ckpt.fps, "window_len": ckpt.window_len},
        "train_state": asdict(ckpt.train_state),
        "tensors": [{"name": n, "shape": list(ckpt.tensors[n].shape)} for n in names],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for n in names:
            fh.write(ckpt.tensors[n].astype("<f4", copy=False).tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise DataFormatError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        size_raw = fh.read(4)
        if len(size_raw) != 4:
            raise DataFormatError(f"{path}: truncated checkpoint header")
        (header_len,) = struct.unpack("<I", size_raw)
        raw = fh.read(header_len)
        if len(raw) != header_len:
            raise DataFormatError(f"{path}: truncated checkpoint header")
        try:
            header = json.loads(raw.decode("utf-8"))
            config = ModelConfig(**header["config"])
            standardizer = Standardizer(
                mean=np.array(header["standardizer"]["mean"], dtype=np.float64),
                std=np.array(header["standardizer"]["std"], dtype=np.float64))
            pipeline = header["pipeline"]
            train_state = TrainState(**header.get("train_state", {}))
            directory = header["tensors"]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: malformed checkpoint header: {exc}") from None
        tensors = {}
        for entry in directory:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise DataFormatError(f"{path}: truncated tensor payload for {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after tensor payloads")
    return Checkpoint(config=config, tensors=tensors, standardizer=standardizer,
                      fps=float(pipeline["fps"]), window_len=int(pipeline["window_len"]),
                      train_state=train_state)
