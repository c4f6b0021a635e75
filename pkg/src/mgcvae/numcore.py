"""Dense layers with hand-written reverse-mode gradients, Adam, and seeded RNG.

Everything is float64. A forward pass returns a :class:`Tape` holding the
intermediates; :func:`backward` walks it in reverse. Layers carry a version
counter that :func:`adam_step` bumps, so a tape recorded before an update
cannot be replayed against the new weights.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mgcvae.errors import NonFiniteGradient, ShapeError, TapeError


# -- random numbers -----------------------------------------------------------------


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox4x64 counter-based generator keyed by ``(seed, *stream)``.

    Distinct ``stream`` tuples give statistically independent generators, so
    callers never share hidden state.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def gaussian(rng: np.random.Generator, n: int | tuple[int, ...]) -> np.ndarray:
    return rng.standard_normal(n)


# -- layers -------------------------------------------------------------------------


class Activation(str, enum.Enum):
    RECTIFIER = "rectifier"
    IDENTITY = "identity"
    LOGISTIC = "logistic"


def logistic(a: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(eq=False)
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: Activation = Activation.IDENTITY
    version: int = 0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.activation = Activation(self.activation)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"W {self.W.shape} and b {self.b.shape} are inconsistent")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int,
             activation: Activation | str = Activation.IDENTITY) -> DenseLayer:
        """He-uniform weights for rectifiers, Glorot-uniform otherwise; zero bias."""
        activation = Activation(activation)
        limit = np.sqrt(6.0 / n_in) if activation is Activation.RECTIFIER else np.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out), activation)

    def parameters(self) -> list[np.ndarray]:
        return [self.W, self.b]


@dataclass
class LayerGrad:
    dW: np.ndarray
    db: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.dW, self.db]


@dataclass
class Tape:
    layers: list[DenseLayer]
    versions: list[int]
    inputs: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


def forward(layers: Sequence[DenseLayer], x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Apply the layers in order to ``x`` of shape ``(in,)`` or ``(batch, in)``."""
    h = np.asarray(x, dtype=np.float64)
    tape = Tape(list(layers), [layer.version for layer in layers])
    for layer in layers:
        if h.shape[-1] != layer.n_in:
            raise ShapeError(f"input width {h.shape[-1]} does not match layer width {layer.n_in}")
        tape.inputs.append(h)
        a = h @ layer.W.T + layer.b
        if layer.activation is Activation.RECTIFIER:
            h = np.maximum(a, 0.0)
        elif layer.activation is Activation.LOGISTIC:
            h = logistic(a)
        else:
            h = a
        tape.outputs.append(h)
    return h, tape


def backward(tape: Tape, grad_out: np.ndarray,
             pre_activation: bool = False) -> tuple[list[LayerGrad], np.ndarray]:
    """Gradients of a scalar loss given ``dL/d output``.

    With ``pre_activation=True`` the incoming gradient is taken with respect to
    the last layer's affine output instead of its activation, which lets a loss
    fuse the logistic into its own derivative. Batched gradients are summed.
    """
    for layer, v in zip(tape.layers, tape.versions):
        if layer.version != v:
            raise TapeError("layer parameters changed after the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != tape.outputs[-1].shape:
        raise ShapeError(f"gradient shape {g.shape} does not match output {tape.outputs[-1].shape}")
    grads: list[LayerGrad] = []
    last = len(tape.layers) - 1
    for k in range(last, -1, -1):
        layer, x, y = tape.layers[k], tape.inputs[k], tape.outputs[k]
        if not (pre_activation and k == last):
            if layer.activation is Activation.RECTIFIER:
                g = g * (y > 0)
            elif layer.activation is Activation.LOGISTIC:
                g = g * y * (1.0 - y)
        if g.ndim == 1:
            dW, db = np.outer(g, x), g.copy()
        else:
            dW, db = g.T @ x, g.sum(axis=0)
        grads.append(LayerGrad(dW, db))
        g = g @ layer.W
    grads.reverse()
    return grads, g


# -- Adam ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, layers: Sequence[DenseLayer], grads: Sequence[LayerGrad],
              batch_index: int | None = None) -> Sequence[DenseLayer]:
    """Bias-corrected Adam update applied in place; bumps each layer's version."""
    if len(layers) != len(grads):
        raise ShapeError(f"{len(layers)} layers but {len(grads)} gradients")
    params = [p for layer in layers for p in layer.parameters()]
    gs = [g for lg in grads for g in lg.arrays()]
    for p, g in zip(params, gs):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient at batch {batch_index}", batch_index)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    for layer in layers:
        layer.version += 1
    return layers
