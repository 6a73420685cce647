"""Sparse mixture-of-experts fusion of multi-layer encoder features.

The stack's last layer (itself not fused) drives a linear gating network
whose logits are top-k-selected per row and normalized by a masked softmax.
Each of the 24 feature layers owns a disjoint group of n experts (two affine
maps around a ReLU, output dimension = input dimension); global expert
idx(i, j) = i*n + j, layer-major. A row's fused layer-i output is the
gate-weighted sum of its selected group-i experts, and experts with zero
gate weight for a row are never evaluated for it. Selection is treated as a
constant during differentiation: gradient reaches only the selected logits.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import numkit as nk
from .numkit import Node, ShapeError

NUM_FUSED_LAYERS = 24  # encoder output + 23 intermediate transformer layers
NUM_INPUT_LAYERS = NUM_FUSED_LAYERS + 1  # plus the last layer, the gate input


class ConfigError(ValueError):
    """Mixture configuration violates its invariants."""


@dataclass(frozen=True)
class MoEConfig:
    """Mixture shape: top-k, experts per layer group, expert hidden width."""

    k: int = 2
    n: int = 4
    hidden: int = 128
    num_layers: int = NUM_FUSED_LAYERS
    feature_dim: int = 1024
    frames: int = 201

    def __post_init__(self):
        if self.k < 1 or self.n < 1 or self.hidden < 1:
            raise ConfigError(f"k, n, hidden must be positive, got {self.k}/{self.n}/{self.hidden}")
        if self.feature_dim < 1 or self.frames < 1 or self.num_layers < 1:
            raise ConfigError("feature_dim, frames and num_layers must be positive")
        if self.k > self.num_experts:
            raise ConfigError(f"k={self.k} exceeds total experts N={self.num_experts}")

    @property
    def num_experts(self):
        return self.n * self.num_layers


@dataclass
class GatingNetwork:
    """Linear gate: W maps a feature row (S) to one logit per expert (N)."""

    W: Node


@dataclass
class Expert:
    """Two affine layers around a ReLU; output dim equals input dim S."""

    W1: Node
    b1: Node
    W2: Node
    b2: Node

    def forward(self, x):
        h = nk.relu(nk.add_bias(nk.matmul(x, self.W1), self.b1))
        return nk.add_bias(nk.matmul(h, self.W2), self.b2)


@dataclass
class GateOutput:
    """Sparse per-row expert weights: min(k, N) positives per row, summing to 1."""

    weights: Node
    mask: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# routing ops (autodiff-aware gather / scatter / gate weighting)
# ---------------------------------------------------------------------------


def take_rows(x, rows):
    """Select rows of a (D, S) node; gradient scatters back to those rows."""
    xv = x.value
    rows = np.ascontiguousarray(rows, dtype=np.intp)
    out = Node(K.gather_rows(xv, rows), (x,), "take_rows")

    def bwd(g):
        gx = np.zeros_like(xv)
        K.scatter_add_rows(gx, rows, g)
        return (gx,)

    out._backward = bwd
    return out


def scatter_rows(x, rows, num_rows):
    """Place a (d, S) node at the given rows of a zero (num_rows, S) tensor."""
    xv = x.value
    rows = np.ascontiguousarray(rows, dtype=np.intp)
    value = np.zeros((num_rows, xv.shape[1]))
    K.scatter_add_rows(value, rows, xv)
    out = Node(value, (x,), "scatter_rows")
    out._backward = lambda g: (K.gather_rows(g, rows),)
    return out


def gate_scale(x, gate, rows, col):
    """Scale the rows of x (d, S) by gate[rows, col] of a (D, N) gate node."""
    xv = x.value
    gv = gate.value
    rows = np.ascontiguousarray(rows, dtype=np.intp)
    w = gv[rows, col]
    out = Node(xv * w[:, None], (x, gate), "gate_scale")

    def bwd(g):
        ggate = np.zeros_like(gv)
        ggate[rows, col] = (g * xv).sum(axis=1)
        return (g * w[:, None], ggate)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# fusion pipeline
# ---------------------------------------------------------------------------


def flatten(x):
    """(B, T, S) -> (B*T, S): row r holds batch r//T, frame r%T."""
    if x.value.ndim != 3:
        raise ShapeError(f"flatten expects rank-3 input, got {x.value.shape}")
    b, t, s = x.value.shape
    return nk.reshape(x, (b * t, s))


def unflatten(x, batch, frames):
    """(B*T, S) -> (B, T, S); exact inverse of flatten."""
    if x.value.ndim != 2:
        raise ShapeError(f"unflatten expects rank-2 input, got {x.value.shape}")
    d, s = x.value.shape
    if d != batch * frames:
        raise ShapeError(f"cannot unflatten {d} rows to {batch}x{frames}")
    return nk.reshape(x, (batch, frames, s))


def gate_forward(gating, last_layer, k):
    """Top-k gate over the flattened last-layer feature.

    Per row: logits = row . W, select the k largest (ties to the lowest
    expert index), softmax over the selected set, exact zeros elsewhere.
    """
    n_experts = gating.W.value.shape[1]
    if not 1 <= k <= n_experts:
        raise ConfigError(f"top-k {k} out of range for N={n_experts} experts")
    logits = nk.matmul(last_layer, gating.W)
    mask = K.topk_mask(logits.value, k)
    weights = nk.masked_softmax(logits, mask)
    return GateOutput(weights=weights, mask=mask)


def fuse_forward(config, experts, gate, flat_layers):
    """Gate-weighted per-layer expert mixtures.

    experts is a [num_layers][n] grid; flat_layers holds the flattened
    (D, S) features of layers 0..num_layers-1. Returns one (D, S) node per
    layer. Rows whose gate selected no expert of a group contribute zero for
    that layer. Unselected experts are never evaluated (and therefore get
    exactly zero gradient).
    """
    if len(experts) != config.num_layers or any(len(g) != config.n for g in experts):
        raise ConfigError(
            f"expert grid {len(experts)}x{len(experts[0]) if experts else 0} "
            f"does not match config {config.num_layers}x{config.n}"
        )
    if len(flat_layers) != config.num_layers:
        raise ConfigError(f"expected {config.num_layers} flat layers, got {len(flat_layers)}")
    gv = gate.weights.value
    num_rows = gv.shape[0]
    if gv.shape[1] != config.num_experts:
        raise ConfigError(f"gate width {gv.shape[1]} != N={config.num_experts}")

    outputs = []
    for i in range(config.num_layers):
        terms = []
        for j in range(config.n):
            e = i * config.n + j
            rows = np.nonzero(gv[:, e])[0]
            if rows.size == 0:
                continue
            x = take_rows(flat_layers[i], rows)
            y = gate_scale(experts[i][j].forward(x), gate.weights, rows, e)
            terms.append(scatter_rows(y, rows, num_rows))
        if not terms:
            outputs.append(nk.leaf(np.zeros((num_rows, flat_layers[i].value.shape[1])), op="zeros"))
            continue
        acc = terms[0]
        for t in terms[1:]:
            acc = nk.add(acc, t)
        outputs.append(acc)
    return outputs


def assemble(fused, batch, frames):
    """Concatenate the per-layer outputs feature-wise and restore (B, T, .).

    Layer i occupies feature columns [i*S, (i+1)*S) of the result.
    """
    shapes = {y.value.shape for y in fused}
    if len(shapes) != 1:
        raise ShapeError(f"fused outputs disagree on shape: {sorted(shapes)}")
    d = fused[0].value.shape[0]
    if d != batch * frames:
        raise ShapeError(f"{d} rows do not factor as batch {batch} x frames {frames}")
    wide = nk.concat(fused, axis=1)
    return nk.reshape(wide, (batch, frames, wide.value.shape[1]))
