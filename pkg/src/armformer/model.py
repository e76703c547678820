"""Full model assembly, training loop and checkpoint serialization."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, fields, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .decoder import HamConfig, HamDecoder
from .encoder import DEFAULT_STAGES, MitEncoder, StageConfig
from .errors import (CheckpointError, ConfigError, DataError, TrainingError)
from .nn import Module
from .tensor import Tensor

CBAM_SITES = 6  # four encoder stages, then decoder pre- and post-context

REDUCED_STAGES = (
    StageConfig(8, 1, 1, 8, patch_kernel=7, patch_stride=4, patch_padding=3),
    StageConfig(16, 1, 2, 4, patch_kernel=3, patch_stride=2, patch_padding=1),
    StageConfig(24, 1, 3, 2, patch_kernel=3, patch_stride=2, patch_padding=1),
    StageConfig(32, 1, 4, 1, patch_kernel=3, patch_stride=2, patch_padding=1),
)


@dataclass(frozen=True)
class ModelConfig:
    """Every architectural knob, with defaults reproducing the standard
    channel/resolution schedule (32, 64, 160, 256 at 1/4..1/32) and uniform
    CBAM sites at reduction 16 / kernel 7.

    The default hamburger settings (rank 16, 2 update rounds) are lighter
    than the standalone ``HamConfig`` defaults: at 640x640 the fused map has
    25600 positions, and a rank-64/6-round factorization alone would add
    ~6.3 GMACs, pushing whole-model complexity far past its ~10 GMAC budget.
    """

    stages: tuple[StageConfig, ...] = DEFAULT_STAGES
    cbam_reductions: tuple[int, ...] = (16,) * CBAM_SITES
    cbam_kernels: tuple[int, ...] = (7,) * CBAM_SITES
    ham: HamConfig = field(default_factory=lambda: HamConfig(rank=16, iterations=2))
    num_classes: int = 6
    input_size: int = 640
    seed: int = 0

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ConfigError("exactly 4 encoder stages required")
        if len(self.cbam_reductions) != CBAM_SITES or len(self.cbam_kernels) != CBAM_SITES:
            raise ConfigError(f"{CBAM_SITES} CBAM sites must be configured")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.input_size % 32:
            raise ConfigError("input_size must be divisible by 32")

    @classmethod
    def default(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def lightweight_cbam(cls) -> "ModelConfig":
        """Cheaper attention variant: reduction 32, kernel 3 at every site."""
        return cls(cbam_reductions=(32,) * CBAM_SITES, cbam_kernels=(3,) * CBAM_SITES)

    @classmethod
    def reduced(cls, input_size: int = 64, seed: int = 0) -> "ModelConfig":
        """Desk-scale configuration for tests, demos and CPU training."""
        return cls(stages=REDUCED_STAGES,
                   ham=HamConfig(rank=8, iterations=2, context_channels=64),
                   input_size=input_size, seed=seed)


class ArmFormer(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.encoder = MitEncoder(config.stages, rng,
                                  config.cbam_reductions[:4], config.cbam_kernels[:4])
        self.decoder = HamDecoder(
            tuple(s.channels for s in config.stages), config.num_classes,
            config.ham, rng,
            cbam_reductions=tuple(config.cbam_reductions[4:]),
            cbam_kernels=tuple(config.cbam_kernels[4:]))

    def __call__(self, images: Tensor) -> Tensor:
        return self.decoder(self.encoder(images))

    def predict(self, images: Tensor) -> np.ndarray:
        """Argmax class map [B,H,W] without recording a graph."""
        with T.no_grad():
            logits = self(images)
        return logits.data.argmax(axis=1).astype(np.int64)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean pixel-wise cross-entropy over batch and spatial positions."""
    labels = np.asarray(labels)
    n_cls = logits.shape[1]
    if labels.min() < 0 or labels.max() >= n_cls:
        raise DataError(f"labels must lie in [0, {n_cls}), got "
                        f"[{labels.min()}, {labels.max()}]")
    return T.softmax_cross_entropy(logits, labels, axis=1)


# ----------------------------------------------------------------------
# optimizer and training loop
# ----------------------------------------------------------------------

@dataclass
class TrainSchedule:
    steps: int
    batch_size: int = 2
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 0  # 0 disables the periodic eval hook

    def validate(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


class AdamW:
    """Adaptive moments with decoupled weight decay (b1=0.9, b2=0.999)."""

    def __init__(self, params: Sequence[tuple[str, Tensor]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


class Batch(NamedTuple):
    images: Tensor      # [B, 3, H, W], values in [0, 1]
    labels: np.ndarray  # [B, H, W], int class ids


def make_batch(samples: Sequence[tuple[np.ndarray, np.ndarray]]) -> Batch:
    images = Tensor(np.stack([img for img, _ in samples]))
    labels = np.stack([lab for _, lab in samples]).astype(np.int64)
    if images.shape[2:] != labels.shape[1:]:
        raise DataError(f"image/label spatial dims disagree: "
                        f"{images.shape} vs {labels.shape}")
    return Batch(images, labels)


def train_step(model: ArmFormer, batch: Batch, opt: AdamW) -> float:
    logits = model(batch.images)
    loss = cross_entropy(logits, batch.labels)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value!r} at optimizer step {opt.t + 1}; "
                            f"check learning rate and input scaling")
    loss.backward()
    opt.step()
    opt.zero_grad()
    return value


class HistoryEntry(NamedTuple):
    step: int
    loss: float
    metrics: dict | None


def fit(model: ArmFormer, data: Sequence[tuple[np.ndarray, np.ndarray]],
        sched: TrainSchedule,
        eval_fn: Callable[[ArmFormer], dict] | None = None,
        log_fn: Callable[[HistoryEntry], None] | None = None) -> list[HistoryEntry]:
    """Run ``sched.steps`` optimizer steps over shuffled mini-batches.

    Batch order is a pure function of ``sched.seed``.  When ``eval_fn`` is
    given it runs every ``sched.eval_every`` steps (and on the final step)
    and its result is stored in the history.
    """
    sched.validate()
    if len(data) == 0:
        raise DataError("dataset is empty")
    opt = AdamW([(n, p) for n, p in model.named_parameters()],
                lr=sched.lr, weight_decay=sched.weight_decay)
    rng = np.random.default_rng(sched.seed)
    order: list[int] = []
    history: list[HistoryEntry] = []
    for step in range(1, sched.steps + 1):
        while len(order) < sched.batch_size:
            order.extend(rng.permutation(len(data)).tolist())
        idx, order = order[:sched.batch_size], order[sched.batch_size:]
        loss = train_step(model, make_batch([data[i] for i in idx]), opt)
        metrics = None
        due = sched.eval_every and (step % sched.eval_every == 0 or step == sched.steps)
        if eval_fn is not None and due:
            metrics = eval_fn(model)
        entry = HistoryEntry(step, loss, metrics)
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)
    return history


# ----------------------------------------------------------------------
# flat config text  (used by checkpoints and the CLI config files)
# ----------------------------------------------------------------------

_STAGE_FIELDS = [f.name for f in fields(StageConfig)]
_HAM_FIELDS = [f.name for f in fields(HamConfig)]


def config_to_text(cfg: ModelConfig) -> str:
    lines = [
        f"model.num_classes = {cfg.num_classes}",
        f"model.input_size = {cfg.input_size}",
        f"model.seed = {cfg.seed}",
    ]
    for i, stage in enumerate(cfg.stages, start=1):
        for name in _STAGE_FIELDS:
            lines.append(f"stage{i}.{name} = {getattr(stage, name)}")
    lines.append("cbam.reductions = " + ",".join(map(str, cfg.cbam_reductions)))
    lines.append("cbam.kernels = " + ",".join(map(str, cfg.cbam_kernels)))
    for name in _HAM_FIELDS:
        lines.append(f"ham.{name} = {getattr(cfg.ham, name)}")
    return "\n".join(lines) + "\n"


def parse_flat_text(text: str) -> dict[str, str]:
    """Parse ``section.key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    return type(like)(value)


def config_from_flat(entries: dict[str, str], base: ModelConfig | None = None) -> ModelConfig:
    """Overlay flat ``section.key`` entries onto a base configuration."""
    preset = entries.pop("model.preset", None)
    if base is None:
        presets = {None: ModelConfig.default, "default": ModelConfig.default,
                   "lightweight": ModelConfig.lightweight_cbam,
                   "reduced": ModelConfig.reduced}
        if preset not in presets:
            raise ConfigError(f"unknown model.preset {preset!r}")
        base = presets[preset]()

    model_kw: dict = {}
    stages = [dict((f, getattr(s, f)) for f in _STAGE_FIELDS) for s in base.stages]
    ham_kw = dict((f, getattr(base.ham, f)) for f in _HAM_FIELDS)
    for key, value in entries.items():
        section, _, name = key.partition(".")
        try:
            if section == "model" and name in ("num_classes", "input_size", "seed"):
                model_kw[name] = int(value)
            elif section.startswith("stage") and name in _STAGE_FIELDS:
                stages[int(section[5:]) - 1][name] = int(value)
            elif section == "cbam" and name in ("reductions", "kernels"):
                model_kw["cbam_" + name] = tuple(int(v) for v in value.split(","))
            elif section == "ham" and name in _HAM_FIELDS:
                ham_kw[name] = _coerce(value, getattr(base.ham, name))
            elif section == "train":
                continue  # schedule keys live in the same file; handled separately
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None
    return replace(base, stages=tuple(StageConfig(**s) for s in stages),
                   ham=HamConfig(**ham_kw), **model_kw)


def schedule_from_flat(entries: dict[str, str], steps_default: int = 100) -> TrainSchedule:
    sched = TrainSchedule(steps=steps_default)
    for key, value in entries.items():
        section, _, name = key.partition(".")
        if section != "train":
            continue
        if not hasattr(sched, name):
            raise ConfigError(f"unknown schedule key {key!r}")
        try:
            setattr(sched, name, _coerce(value, getattr(sched, name)))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None
    return sched


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ARMF"
CHECKPOINT_VERSION = 1


def checkpoint_save(model: ArmFormer) -> bytes:
    """Serialize config text plus the full parameter table.

    Layout (all integers little-endian): magic ``ARMF``, u32 version,
    u32-length-prefixed config text, u32 parameter count, then per parameter
    a u16-length-prefixed name, u8 rank, u32 dims and the raw float64
    payload.  The trailing u64 is the first 8 bytes of the SHA-256 of
    everything before it.
    """
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    cfg_bytes = config_to_text(model.config).encode("utf-8")
    out += struct.pack("<I", len(cfg_bytes))
    out += cfg_bytes
    params = list(model.named_parameters())
    out += struct.pack("<I", len(params))
    for name, p in params:
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", p.ndim)
        out += struct.pack(f"<{p.ndim}I", *p.shape)
        out += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    out += hashlib.sha256(bytes(out)).digest()[:8]
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        piece = self.data[self.pos:self.pos + n]
        self.pos += n
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_load(data: bytes, expected_config: ModelConfig | None = None) -> ArmFormer:
    """Rebuild a model bit-exactly from ``checkpoint_save`` output."""
    if len(data) < 16:
        raise CheckpointError("checkpoint too short")
    body, checksum = data[:-8], data[-8:]
    if hashlib.sha256(body).digest()[:8] != checksum:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")
    r = _Reader(body)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("<I")
    try:
        cfg = config_from_flat(parse_flat_text(r.take(cfg_len).decode("utf-8")))
    except ConfigError as exc:
        raise CheckpointError(f"embedded config invalid: {exc}") from None
    if expected_config is not None and cfg != expected_config:
        raise CheckpointError("checkpoint config does not match the expected config")

    model = ArmFormer(cfg)
    registry = dict(model.named_parameters())
    (count,) = r.unpack("<I")
    if count != len(registry):
        raise CheckpointError(f"parameter count mismatch: file has {count}, "
                              f"model has {len(registry)}")
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if name not in registry:
            raise CheckpointError(f"unknown parameter {name!r} in checkpoint")
        p = registry[name]
        if p.shape != shape:
            raise CheckpointError(f"shape mismatch for {name!r}: "
                                  f"file {shape}, model {p.shape}")
        n = int(np.prod(shape))
        payload = np.frombuffer(r.take(8 * n), dtype="<f8")
        p.data[...] = payload.reshape(shape)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after parameter table")
    return model
