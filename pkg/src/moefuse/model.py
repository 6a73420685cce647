"""End-to-end trainable model: gate + expert grid + scoring head.

Holds the flat parameter registry (name -> leaf node with matching grad
buffer) and builds a fresh computation graph per batch on top of those
leaves. Input features are wrapped as constant leaves and never mutated;
only registry parameters are updated, and only between batches.
"""

import numpy as np

from . import classifier, moe_fusion, numkit as nk
from .classifier import ScoringHead
from .moe_fusion import NUM_INPUT_LAYERS, Expert, GatingNetwork, MoEConfig


class FusionModel:
    """Trainable MoE fusion + head for one feature geometry (S, T)."""

    def __init__(self, config: MoEConfig, head_width=classifier.DEFAULT_HEAD_WIDTH, seed=0):
        self.config = config
        self.head_width = int(head_width)
        self.params = {}
        rng = np.random.default_rng(seed)
        s, h, n = config.feature_dim, config.hidden, config.n

        self.gating = GatingNetwork(W=self._init(rng, "gate.W", (s, config.num_experts), fan_in=s))
        self.experts = []
        for i in range(config.num_layers):
            group = []
            for j in range(n):
                tag = f"expert.{i}.{j}"
                group.append(
                    Expert(
                        W1=self._init(rng, f"{tag}.W1", (s, h), fan_in=s),
                        b1=self._init(rng, f"{tag}.b1", (h,), fan_in=None),
                        W2=self._init(rng, f"{tag}.W2", (h, s), fan_in=h),
                        b2=self._init(rng, f"{tag}.b2", (s,), fan_in=None),
                    )
                )
            self.experts.append(group)
        wide = config.num_layers * s
        self.head = ScoringHead(
            Wp=self._init(rng, "head.Wp", (wide, self.head_width), fan_in=wide),
            bp=self._init(rng, "head.bp", (self.head_width,), fan_in=None),
            Wo=self._init(rng, "head.Wo", (self.head_width, 2), fan_in=self.head_width),
            bo=self._init(rng, "head.bo", (2,), fan_in=None),
        )

    def _init(self, rng, name, shape, fan_in):
        # weights ~ U[-a, a] with a = sqrt(1/fan_in); biases start at zero
        if fan_in is None:
            value = np.zeros(shape)
        else:
            a = np.sqrt(1.0 / fan_in)
            value = rng.uniform(-a, a, size=shape)
        node = nk.leaf(value, op=f"param:{name}")
        self.params[name] = node
        return node

    def forward(self, layers):
        """Logit node for a batch given its 25 stacked (B, T, S) layer arrays."""
        if len(layers) != NUM_INPUT_LAYERS:
            raise moe_fusion.ConfigError(f"expected {NUM_INPUT_LAYERS} layers, got {len(layers)}")
        b, t, s = np.shape(layers[0])
        if s != self.config.feature_dim:
            raise moe_fusion.ConfigError(
                f"feature dim {s} != model feature dim {self.config.feature_dim}"
            )
        flat = [moe_fusion.flatten(nk.leaf(layers[i], op=f"input.{i}")) for i in range(len(layers))]
        gate = moe_fusion.gate_forward(self.gating, flat[-1], self.config.k)
        fused = moe_fusion.fuse_forward(self.config, self.experts, gate, flat[:-1])
        assembled = moe_fusion.assemble(fused, b, t)
        return classifier.score(self.head, assembled)

    def scores(self, layers):
        """Countermeasure scores (higher = more bonafide) for one batch."""
        return classifier.cm_scores(self.forward(layers).value)

    def num_parameters(self):
        return sum(p.value.size for p in self.params.values())

    def param_arrays(self):
        """Copies of all parameter values, keyed by registry name."""
        return {name: node.value.copy() for name, node in self.params.items()}

    def load_param_arrays(self, arrays):
        for name, node in self.params.items():
            src = arrays[name]
            if src.shape != node.value.shape:
                raise moe_fusion.ConfigError(
                    f"parameter {name}: shape {src.shape} != expected {node.value.shape}"
                )
            node.value[...] = src

    def zero_grad(self):
        for node in self.params.values():
            node.zero_grad()
