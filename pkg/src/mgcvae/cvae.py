"""Graph-matrix VAE (unconditional) and CVAE (property-conditioned).

The encoder maps a flattened one-hot graph matrix, optionally concatenated with
a condition vector, to the mean and log-variance of a diagonal Gaussian. The
decoder maps a latent sample, again concatenated with the condition, to
independent Bernoulli probabilities for every matrix entry. The training
objective per molecule is ``BCE(x, x_hat) + beta * KL(q(z|x,c) || N(0, I))``.

Checkpoint layout (``.mgcv``, little-endian)::

    magic b"MGCV" | u16 version | u32 n | config JSON (n bytes)
    | u32 m | metadata JSON (m bytes) | u64 k | k float64 weights | sha256 of everything before
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from mgcvae.dataset import DatasetManifest, RecordCache, batches
from mgcvae.errors import ChecksumError, ConditionError, DataError, ShapeError
from mgcvae.molgraph import DEFAULT_SCHEMA, MolGraph, Schema, decode_matrix
from mgcvae.numcore import (
    Activation,
    AdamState,
    DenseLayer,
    LayerGrad,
    adam_step,
    backward,
    forward,
    gaussian,
    make_rng,
)
from mgcvae.props import CONDITION_DIM, ConditionVector

BCE_EPS = 1e-7
CKPT_MAGIC = b"MGCV"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    latent_dim: int = 128
    encoder_widths: tuple[int, ...] = (512, 256)
    decoder_widths: tuple[int, ...] = (256, 512)
    condition_dim: int = 0
    kl_warmup_epochs: float = 1.0
    batch_size: int = 256
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0
    schema: Schema = DEFAULT_SCHEMA

    def __post_init__(self):
        if isinstance(self.schema, dict):
            self.schema = Schema(**self.schema)
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if self.condition_dim not in (0, CONDITION_DIM):
            raise ValueError(f"condition_dim must be 0 or {CONDITION_DIM}, got {self.condition_dim}")
        dims = (self.latent_dim, self.batch_size, *self.encoder_widths, *self.decoder_widths)
        if min(dims) <= 0 or self.epochs < 0 or self.lr <= 0 or self.kl_warmup_epochs < 0:
            raise ValueError("model dimensions, batch size and learning rate must be positive")

    @property
    def kind(self) -> str:
        return "mgcvae" if self.condition_dim else "mgvae"

    @property
    def conditional(self) -> bool:
        return self.condition_dim > 0

    @property
    def input_dim(self) -> int:
        return self.schema.flat_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["decoder_widths"] = list(self.decoder_widths)
        d["schema"] = self.schema.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class LossParts(NamedTuple):
    total: float
    recon: float
    kl: float


class Model:
    """Encoder and decoder stacks plus their configuration."""

    def __init__(self, config: ModelConfig, encoder: list[DenseLayer] | None = None,
                 decoder: list[DenseLayer] | None = None, metadata: dict | None = None):
        self.config = config
        self.metadata = dict(metadata or {})
        if encoder is None or decoder is None:
            encoder, decoder = _init_layers(config)
        self.encoder = encoder
        self.decoder = decoder

    @property
    def layers(self) -> list[DenseLayer]:
        return self.encoder + self.decoder

    def _with_condition(self, v: np.ndarray, c) -> np.ndarray:
        if self.config.conditional:
            if c is None:
                raise ConditionError("conditional model needs a condition vector")
            c = c.vector if isinstance(c, ConditionVector) else np.asarray(c, dtype=np.float64)
            if c.shape[-1] != self.config.condition_dim:
                raise ShapeError(f"condition width {c.shape[-1]} != {self.config.condition_dim}")
            if v.ndim == 2 and c.ndim == 1:
                c = np.broadcast_to(c, (v.shape[0], c.shape[0]))
            return np.concatenate([v, c], axis=-1)
        if c is not None:
            raise ConditionError("unconditional model does not take a condition vector")
        return v

    def encode(self, x: np.ndarray, c=None) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        s = self.config.schema
        if x.ndim >= 2 and x.shape[-2:] == (s.S, s.width):
            x = x.reshape(*x.shape[:-2], s.flat_size)
        if x.shape[-1] != self.config.input_dim:
            raise ShapeError(f"input length {x.shape[-1]} != {self.config.input_dim}")
        out, _ = forward(self.encoder, self._with_condition(x, c))
        L = self.config.latent_dim
        return out[..., :L], out[..., L:]

    def decode_flat(self, z: np.ndarray, c=None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.config.latent_dim:
            raise ShapeError(f"latent width {z.shape[-1]} != {self.config.latent_dim}")
        out, _ = forward(self.decoder, self._with_condition(z, c))
        return out

    def decode(self, z: np.ndarray, c=None) -> np.ndarray:
        """Probabilities shaped ``(S, width)``, or ``(n, S, width)`` for a batch of latents."""
        out = self.decode_flat(z, c)
        s = self.config.schema
        return out.reshape(*out.shape[:-1], s.S, s.width)


def _init_layers(config: ModelConfig) -> tuple[list[DenseLayer], list[DenseLayer]]:
    rng = make_rng(config.seed, 0)
    enc, dec = [], []
    n_in = config.input_dim + config.condition_dim
    for w in config.encoder_widths:
        enc.append(DenseLayer.init(rng, n_in, w, Activation.RECTIFIER))
        n_in = w
    enc.append(DenseLayer.init(rng, n_in, 2 * config.latent_dim, Activation.IDENTITY))
    n_in = config.latent_dim + config.condition_dim
    for w in config.decoder_widths:
        dec.append(DenseLayer.init(rng, n_in, w, Activation.RECTIFIER))
        n_in = w
    dec.append(DenseLayer.init(rng, n_in, config.input_dim, Activation.LOGISTIC))
    return enc, dec


# -- objective ----------------------------------------------------------------------


def reparameterize(mu: np.ndarray, logvar: np.ndarray, eps: np.ndarray) -> np.ndarray:
    if np.shape(mu) != np.shape(logvar) or np.shape(mu) != np.shape(eps):
        raise ShapeError("mu, logvar and eps must share a shape")
    return mu + np.exp(0.5 * logvar) * eps


def kl_divergence(mu, logvar) -> float:
    mu, logvar = np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    # -1/2 sum(1 + logvar - mu^2 - e^logvar), arranged so the zero case is +0.0
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar))


def bce(x: np.ndarray, p: np.ndarray) -> float:
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.sum(x * np.log(pc) + (1.0 - x) * np.log1p(-pc)))


def elbo_loss(x, x_hat, mu, logvar, beta: float = 1.0) -> LossParts:
    """Negative ELBO of one molecule (or a batch, summed): recon + beta * KL."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.size != x_hat.size:
        raise ShapeError(f"target size {x.size} != reconstruction size {x_hat.size}")
    recon = bce(x.reshape(x_hat.shape), x_hat)
    kl = kl_divergence(mu, logvar)
    return LossParts(recon + beta * kl, recon, kl)


def loss_and_grads(model: Model, X: np.ndarray, C: np.ndarray | None, eps: np.ndarray,
                   beta: float) -> tuple[LossParts, list[LayerGrad]]:
    """Batch-mean loss and its exact gradient for every layer (encoder first)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    L = model.config.latent_dim
    h, enc_tape = forward(model.encoder, model._with_condition(X, C))
    mu, logvar = h[:, :L], h[:, L:]
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    p, dec_tape = forward(model.decoder, model._with_condition(z, C))

    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    recon = -np.sum(X * np.log(pc) + (1.0 - X) * np.log1p(-pc))
    ev = np.exp(logvar)
    kl = 0.5 * np.sum(mu * mu + ev - 1.0 - logvar)

    # logistic + clipped BCE: d/dlogit = p - x inside the clip window, 0 outside
    inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    g_logit = np.where(inside, p - X, 0.0) / n
    dec_grads, g_in = backward(dec_tape, g_logit, pre_activation=True)
    dz = g_in[:, :L]
    dmu = dz + beta * mu / n
    dlogvar = dz * eps * 0.5 * std + beta * 0.5 * (ev - 1.0) / n
    enc_grads, _ = backward(enc_tape, np.concatenate([dmu, dlogvar], axis=1))
    parts = LossParts(float((recon + beta * kl) / n), float(recon / n), float(kl / n))
    return parts, enc_grads + dec_grads


# -- training -----------------------------------------------------------------------


class EpochLoss(NamedTuple):
    epoch: int
    recon: float
    kl: float
    total: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochLoss] = field(default_factory=list)


def kl_weight(step: int, steps_per_epoch: int, warmup_epochs: float) -> float:
    """Linear warmup of the KL weight from 0 to 1 over ``warmup_epochs``."""
    warm = warmup_epochs * steps_per_epoch
    return 1.0 if warm <= 0 else min(1.0, step / warm)


def train(config: ModelConfig, manifest: DatasetManifest, cache: RecordCache | None = None,
          log_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
          on_epoch: Callable[[EpochLoss], None] | None = None) -> TrainResult:
    """Minibatch Adam on the negative ELBO; deterministic given ``config.seed``."""
    cache = cache if cache is not None else manifest.open_cache()
    if cache.schema != config.schema:
        raise DataError("dataset schema does not match the model schema")
    n_train = len(manifest.train_indices)
    if n_train == 0:
        raise DataError("training split is empty")
    model = Model(config)
    state = AdamState(lr=config.lr)
    steps_per_epoch = math.ceil(n_train / config.batch_size)
    result = TrainResult(model)
    step = 0
    for epoch in range(1, config.epochs + 1):
        eps_rng = make_rng(config.seed, 2, epoch)
        sums = np.zeros(3)
        for k, (X, C) in enumerate(batches(manifest, "train", config.batch_size, _epoch_seed(config.seed, epoch),
                                           cache)):
            beta = kl_weight(step, steps_per_epoch, config.kl_warmup_epochs)
            eps = gaussian(eps_rng, (X.shape[0], config.latent_dim))
            parts, grads = loss_and_grads(model, X, C if config.conditional else None, eps, beta)
            adam_step(state, model.layers, grads, batch_index=step)
            sums += X.shape[0] * np.array([parts.recon, parts.kl, parts.total])
            step += 1
        recon, kl, total = sums / n_train
        row = EpochLoss(epoch, float(recon), float(kl), float(total))
        result.history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    model.metadata = {
        "epochs_completed": config.epochs,
        "final_loss": result.history[-1]._asdict() if result.history else None,
        "train_records": n_train,
    }
    if log_path is not None:
        write_loss_log(log_path, result.history)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return result


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(make_rng(seed, 1, epoch).integers(2**62))


def evaluate_loss(model: Model, X: np.ndarray, C: np.ndarray | None, seed: int = 0,
                  batch_size: int = 1024) -> LossParts:
    """Mean negative ELBO (KL weight 1) with seeded posterior samples."""
    rng = make_rng(seed, 4)
    sums = np.zeros(3)
    n = len(X)
    for s in range(0, n, batch_size):
        xb = X[s:s + batch_size]
        cb = None if C is None else C[s:s + batch_size]
        L = model.config.latent_dim
        mu, logvar = model.encode(xb, cb)
        z = reparameterize(mu, logvar, gaussian(rng, (len(xb), L)))
        p = model.decode_flat(z, cb)
        recon = bce(xb, p)
        kl = kl_divergence(mu, logvar)
        sums += [recon + kl, recon, kl]
    total, recon, kl = sums / n
    return LossParts(float(total), float(recon), float(kl))


def write_loss_log(path: str | Path, history: Sequence[EpochLoss]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "recon", "kl", "total"])
        for row in history:
            w.writerow([row.epoch, repr(row.recon), repr(row.kl), repr(row.total)])


# -- checkpoints --------------------------------------------------------------------


def save_checkpoint(model: Model, path: str | Path) -> None:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode()
    meta = json.dumps(model.metadata, sort_keys=True).encode()
    weights = np.concatenate([p.ravel() for layer in model.layers for p in layer.parameters()])
    body = (CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(cfg)) + cfg
            + struct.pack("<I", len(meta)) + meta
            + struct.pack("<Q", weights.size) + weights.astype("<f8").tobytes())
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path: str | Path) -> Model:
    data = Path(path).read_bytes()
    if len(data) < 4 + 6 + 32 or data[:4] != CKPT_MAGIC:
        raise ChecksumError(f"{path}: not a model checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch")
    version, n = struct.unpack_from("<HI", body, 4)
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    config = ModelConfig.from_dict(json.loads(body[off:off + n]))
    off += n
    (m,) = struct.unpack_from("<I", body, off)
    off += 4
    metadata = json.loads(body[off:off + m])
    off += m
    (k,) = struct.unpack_from("<Q", body, off)
    off += 8
    weights = np.frombuffer(body, dtype="<f8", count=k, offset=off)
    if off + 8 * k != len(body):
        raise ChecksumError(f"{path}: weight block length does not match its header")
    template = Model(config)
    expected = sum(p.size for layer in template.layers for p in layer.parameters())
    if expected != k:
        raise ChecksumError(f"{path}: {k} weights stored but the config needs {expected}")
    pos = 0
    for layer in template.layers:
        for p in layer.parameters():
            p[...] = weights[pos:pos + p.size].reshape(p.shape)
            pos += p.size
    template.metadata = metadata
    return template


# -- generation ---------------------------------------------------------------------


def sample(model: Model | str | Path, c: ConditionVector | None, n: int, seed: int,
           batch_size: int = 1000) -> list[MolGraph]:
    """Decode ``n`` prior draws into valid graphs (repair guarantees validity)."""
    if not isinstance(model, Model):
        model = load_checkpoint(model)
    if model.config.conditional and c is None:
        raise ConditionError("conditional model needs a condition vector")
    if not model.config.conditional and c is not None:
        raise ConditionError("unconditional model does not take a condition vector")
    # each condition draws its own latents, so a grid sampled under one seed
    # is n independent draws per cell rather than one set decoded 20 ways
    key = () if c is None else tuple(int(i) for i in np.flatnonzero(c.vector))
    rng = make_rng(seed, 3, *key)
    out: list[MolGraph] = []
    for s in range(0, n, batch_size):
        k = min(batch_size, n - s)
        z = gaussian(rng, (k, model.config.latent_dim))
        probs = model.decode(z, c)
        out.extend(decode_matrix(p, model.config.schema) for p in probs)
    return out
