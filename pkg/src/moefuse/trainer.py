"""Training loop: AdamW with decoupled decay, per-epoch cosine schedule with
warm-up, early stopping on training loss, and a versioned checkpoint format.

Only registry parameters are mutated; input features are never touched. Runs
are fully seeded (parameter init and per-epoch shuffling), so one seed yields
bit-identical loss logs and checkpoints.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkit as nk
from .data import LABEL_NONE, make_batches
from .model import FusionModel
from .moe_fusion import ConfigError, MoEConfig

CKPT_MAGIC = b"MFCK"
CKPT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""


class FileFormatError(ValueError):
    """Malformed checkpoint bytes."""


@dataclass(frozen=True)
class TrainConfig:
    lr_base: float = 1e-5  # frozen-encoder setting
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_epochs: int = 3
    max_epochs: int = 50
    patience: int = 3
    batch_size: int = 4
    seed: int = 0
    class_weights: tuple = (1.0, 1.0)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0 <= self.warmup_epochs < self.max_epochs:
            raise ConfigError(
                f"need 0 <= warmup_epochs < max_epochs, got {self.warmup_epochs}/{self.max_epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


class OptState:
    """Per-parameter first/second moment buffers and the shared step count."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.t = 0


def adamw_step(params, state, lr, cfg):
    """One AdamW update: p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p)."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for name, p in params.items():
        g = p.grad
        m, v = state.m[name], state.v[name]
        if m.shape != g.shape:
            raise ConfigError(f"optimizer state for {name} has shape {m.shape}, grad {g.shape}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps) + cfg.weight_decay * p.value
        p.value -= lr * update


def cosine_lr(epoch, cfg):
    """Per-epoch LR: linear warm-up to lr_base, then a cosine decay to ~0."""
    if not 0 <= epoch < cfg.max_epochs:
        raise ConfigError(f"epoch {epoch} outside 0..{cfg.max_epochs - 1}")
    if epoch < cfg.warmup_epochs:
        return cfg.lr_base * (epoch + 1) / cfg.warmup_epochs
    span = cfg.max_epochs - cfg.warmup_epochs
    return cfg.lr_base * 0.5 * (1.0 + np.cos(np.pi * (epoch - cfg.warmup_epochs) / span))


class EarlyStopper:
    """Stop when the loss has not strictly improved for `patience` epochs."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_index = -1
        self.bad = 0
        self.count = 0

    def update(self, loss):
        """Record one epoch loss; returns (improved, stop)."""
        improved = loss < self.best
        if improved:
            self.best = loss
            self.best_index = self.count
            self.bad = 0
        else:
            self.bad += 1
        self.count += 1
        return improved, self.bad >= self.patience


@dataclass
class TrainResult:
    best_params: dict
    best_epoch: int
    loss_log: list
    lr_log: list
    epochs_run: int


def train(model, records, cfg, progress=None):
    """Run up to cfg.max_epochs over the records; return the best checkpoint.

    The checkpoint is the parameter snapshot with minimum epoch-mean training
    cross-entropy. Raises TrainingDivergedError naming epoch and batch on a
    non-finite loss.
    """
    if any(r.label == LABEL_NONE for r in records):
        raise ConfigError("training split contains unlabeled utterances")
    state = OptState(model.params)
    stopper = EarlyStopper(cfg.patience)
    loss_log, lr_log = [], []
    best_params = model.param_arrays()
    n_total = len(records)

    for epoch in range(cfg.max_epochs):
        lr = float(cosine_lr(epoch, cfg))
        weighted_sum = 0.0
        for bi, batch in enumerate(make_batches(records, cfg.batch_size, seed=[cfg.seed, epoch])):
            logits = model.forward(batch.layers)
            loss = nk.cross_entropy_with_logits(logits, batch.labels, cfg.class_weights)
            lv = float(loss.value)
            if not np.isfinite(lv):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {bi}")
            model.zero_grad()
            nk.backward(loss)
            adamw_step(model.params, state, lr, cfg)
            weighted_sum += lv * batch.size
        epoch_loss = weighted_sum / n_total
        loss_log.append(epoch_loss)
        lr_log.append(lr)
        improved, stop = stopper.update(epoch_loss)
        if improved:
            best_params = model.param_arrays()
        if progress is not None:
            progress(epoch, epoch_loss, lr)
        if stop:
            break

    return TrainResult(
        best_params=best_params,
        best_epoch=stopper.best_index,
        loss_log=loss_log,
        lr_log=lr_log,
        epochs_run=len(loss_log),
    )


# ---------------------------------------------------------------------------
# checkpoint container: MFCK = magic, version, JSON header, raw f64 payloads
# ---------------------------------------------------------------------------

_CKPT_PREFIX = struct.Struct("<4sII")  # magic, version, header_len


@dataclass
class Checkpoint:
    moe_config: MoEConfig
    head_width: int
    train_config: TrainConfig
    loss_log: list
    best_epoch: int
    params: dict = field(repr=False)

    def build_model(self):
        model = FusionModel(self.moe_config, head_width=self.head_width, seed=0)
        model.load_param_arrays(self.params)
        return model


def save_checkpoint(path, model, train_cfg, loss_log, best_epoch, params=None):
    """Write model parameters + configs + loss log as one binary container."""
    params = model.param_arrays() if params is None else params
    header = {
        "moe_config": asdict(model.config),
        "head_width": model.head_width,
        "train_config": asdict(train_cfg),
        "loss_log": list(loss_log),
        "best_epoch": int(best_epoch),
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        f.write(blob)
        for arr in params.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _CKPT_PREFIX.size:
        raise FileFormatError(f"{path}: truncated checkpoint header")
    magic, version, header_len = _CKPT_PREFIX.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise FileFormatError(f"{path}: unsupported checkpoint version {version}")
    offset = _CKPT_PREFIX.size
    header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise FileFormatError(f"{path}: payload truncated at parameter {entry['name']}")
        params[entry["name"]] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        )
        offset += nbytes
    if offset != len(raw):
        raise FileFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    tc = dict(header["train_config"])
    tc["class_weights"] = tuple(tc["class_weights"])
    return Checkpoint(
        moe_config=MoEConfig(**header["moe_config"]),
        head_width=int(header["head_width"]),
        train_config=TrainConfig(**tc),
        loss_log=list(header["loss_log"]),
        best_epoch=int(header["best_epoch"]),
        params=params,
    )
