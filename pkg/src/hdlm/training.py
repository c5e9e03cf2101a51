"""Training loop: Adam with bias correction, global-norm gradient clipping,
seeded per-epoch shuffling, mid-epoch evaluation hooks, and a binary
checkpoint format that stores parameters, optimizer moments, and a config
fingerprint.

Checkpoint layout (all little-endian): magic "HDLM", u32 version, u64
iteration, then repeated entries of (u32 name length, name bytes, u32 rank,
u32 dims..., f64 values).  Optimizer moments are stored under
``adam/m/<name>`` and ``adam/v/<name>`` plus a scalar ``adam/t``; the model
configuration is fingerprinted as a sha256 digest under ``meta/config``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .data import ConfigError
from .model import ModelConfig, ModelParams, compute_losses
from .tensor import Tape, Tensor, backward, seeded_rng

CHECKPOINT_MAGIC = b"HDLM"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the model."""


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite; carries the iteration and batch."""


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def create(named_params: dict[str, Tensor]) -> "AdamState":
        return AdamState(
            m={n: np.zeros_like(t.data) for n, t in named_params.items()},
            v={n: np.zeros_like(t.data) for n, t in named_params.items()},
        )


def adam_step(
    named_params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place.

    A zero gradient on fresh state is an exact no-op, so parameters whose
    loss terms were absent this batch stay bitwise unchanged.
    """
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, tensor in named_params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        tensor.data -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place to a global L2 norm of at most
    ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def collect_gradients(tape: Tape, grads, named_params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients by parameter name, zero-filled where the loss never touched
    the parameter."""
    out = {}
    for name, t in named_params.items():
        g = grads.get(tape.node_of(t))
        out[name] = g.data if g is not None else np.zeros_like(t.data)
    return out


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 16
    epochs: int = 250
    seed: int = 0
    clip_norm: float = 5.0
    evals_per_epoch: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.evals_per_epoch < 0:
            raise ConfigError(f"evals_per_epoch must be >= 0, got {self.evals_per_epoch}")


@dataclass
class TrainResult:
    history: list[dict]
    iterations: int


def eval_boundaries(num_batches: int, evals_per_epoch: int) -> list[int]:
    """1-based batch indices after which the evaluation hook fires, spread
    evenly across the epoch and deduplicated."""
    if evals_per_epoch < 1:
        return []
    marks = {
        math.ceil(num_batches * k / evals_per_epoch)
        for k in range(1, evals_per_epoch + 1)
    }
    return sorted(m for m in marks if m >= 1)


def train(
    params: ModelParams,
    model_config: ModelConfig,
    records,
    config: TrainConfig,
    eval_hook=None,
    log_path=None,
) -> TrainResult:
    """Minimize the total loss over ``records``.

    Shuffles with a single generator seeded once, so the batch sequence is a
    pure function of the seed.  ``eval_hook(iteration, params)`` fires at the
    configured batch boundaries.  Per-iteration losses are appended to the
    history and, when ``log_path`` is given, streamed as JSON lines.
    """
    if len(records) == 0:
        raise ValueError("train needs a nonempty record list")
    named = params.named_parameters()
    state = AdamState.create(named)
    rng = seeded_rng(config.seed)
    history: list[dict] = []
    iteration = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(records))
            batches = [
                order[i:i + config.batch_size]
                for i in range(0, len(records), config.batch_size)
            ]
            fire = set(eval_boundaries(len(batches), config.evals_per_epoch))
            for k, idx in enumerate(batches, start=1):
                batch = [records[i] for i in idx]
                with Tape() as tape:
                    bundle = compute_losses(params, model_config, batch)
                numbers = bundle.numbers()
                if not all(math.isfinite(v) for v in numbers.values()):
                    raise TrainingDivergedError(
                        f"non-finite loss at iteration {iteration + 1} "
                        f"(epoch {epoch + 1}, batch {k})"
                    )
                grads = collect_gradients(tape, backward(tape, bundle.total), named)
                clip_gradients(grads, config.clip_norm)
                adam_step(named, grads, state, config.learning_rate)
                iteration += 1
                entry = {"iteration": iteration, **numbers}
                history.append(entry)
                if log_fh is not None:
                    log_fh.write(json.dumps(entry) + "\n")
                if eval_hook is not None and k in fire:
                    eval_hook(iteration, params)
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(history=history, iterations=iteration)


def load_training_log(path) -> list[dict]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(json.loads(line))
    return entries


# ---------------------------------------------------------------------------
# checkpoints


def config_fingerprint(config: ModelConfig) -> np.ndarray:
    """sha256 of the sorted config fields, as 32 float64 byte values."""
    payload = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return np.frombuffer(digest, dtype=np.uint8).astype(np.float64)


def _checkpoint_entries(params: ModelParams, config: ModelConfig, adam: AdamState | None):
    yield "meta/config", config_fingerprint(config)
    for name, t in params.named_parameters().items():
        yield name, t.data
    if adam is not None:
        for name in params.named_parameters():
            yield f"adam/m/{name}", adam.m[name]
            yield f"adam/v/{name}", adam.v[name]
        yield "adam/t", np.array([float(adam.t)])


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    iteration: int, adam: AdamState | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, iteration))
        for name, arr in _checkpoint_entries(params, config, adam):
            name_b = name.encode("utf-8")
            arr = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n: int, path, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise CheckpointError(f"{path}: truncated while reading {what}")
    return blob


def _parse_checkpoint(path) -> tuple[int, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        head = _read_exact(fh, 16, path, "header")
        magic, version, iteration = struct.unpack("<4sIQ", head)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        entries: dict[str, np.ndarray] = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            if len(raw) != 4:
                raise CheckpointError(f"{path}: truncated while reading entry header")
            (name_len,) = struct.unpack("<I", raw)
            name = _read_exact(fh, name_len, path, "entry name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, path, f"{name} rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, path, f"{name} dims"))
            count = int(np.prod(dims)) if rank else 1
            blob = _read_exact(fh, 8 * count, path, f"{name} values")
            entries[name] = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(dims)
    return iteration, entries


def load_checkpoint(path, params: ModelParams, config: ModelConfig) -> tuple[int, AdamState | None]:
    """Restore parameters (in place) and optimizer state from ``path``.

    The stored config fingerprint must match ``config``; every parameter must
    be present with its exact shape, and no unknown entries may remain.
    """
    iteration, entries = _parse_checkpoint(path)
    digest = entries.pop("meta/config", None)
    if digest is None or not np.array_equal(digest, config_fingerprint(config)):
        raise CheckpointError(
            f"{path}: checkpoint was written for a different model configuration"
        )
    named = params.named_parameters()
    for name, t in named.items():
        arr = entries.pop(name, None)
        if arr is None:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if arr.shape != t.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {arr.shape}, expected {t.data.shape}"
            )
        t.data[...] = arr
    adam = None
    if "adam/t" in entries:
        t_arr = entries.pop("adam/t")
        adam = AdamState(m={}, v={}, t=int(t_arr[0]))
        for name, t in named.items():
            for kind, store in (("m", adam.m), ("v", adam.v)):
                key = f"adam/{kind}/{name}"
                arr = entries.pop(key, None)
                if arr is None or arr.shape != t.data.shape:
                    raise CheckpointError(f"{path}: missing or misshapen {key!r}")
                store[name] = arr.copy()
    if entries:
        raise CheckpointError(f"{path}: unknown entry {next(iter(entries))!r}")
    return iteration, adam
