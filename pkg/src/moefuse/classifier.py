"""Lightweight scoring head: assembled fusion output -> one score per utterance.

Mean-pools the (B, T, F) fusion output over time, applies affine + ReLU to a
small hidden width, then an affine map to two logits (index 0 = spoof,
1 = bonafide). The countermeasure score is logit[bonafide] - logit[spoof];
higher means more bonafide. Frame order cannot affect the score (mean pool).
"""

from dataclasses import dataclass

from . import numkit as nk
from .numkit import Node, ShapeError

DEFAULT_HEAD_WIDTH = 64
SPOOF, BONAFIDE = 0, 1


@dataclass
class ScoringHead:
    """Projection (F x P) + ReLU, then output map (P x 2)."""

    Wp: Node
    bp: Node
    Wo: Node
    bo: Node


def score(head, fused):
    """Two logits per utterance from a (B, T, F) fused node."""
    if fused.value.ndim != 3:
        raise ShapeError(f"score expects (B, T, F) input, got {fused.value.shape}")
    if fused.value.shape[2] != head.Wp.value.shape[0]:
        raise ShapeError(
            f"fused feature width {fused.value.shape[2]} != head input {head.Wp.value.shape[0]}"
        )
    pooled = nk.mean_pool(fused, axis=1)
    h = nk.relu(nk.add_bias(nk.matmul(pooled, head.Wp), head.bp))
    return nk.add_bias(nk.matmul(h, head.Wo), head.bo)


def cm_scores(logits_value):
    """Countermeasure scores from a (B, 2) logit array."""
    return logits_value[:, BONAFIDE] - logits_value[:, SPOOF]
