"""Scoring head: pooling, score orientation, equivariances, gradients."""

import numpy as np
import numpy.testing as npt
import pytest

import moefuse.numkit as nk
from moefuse.classifier import ScoringHead, cm_scores, score
from checks import central_diff, rel_err


def make_head(rng, width_in, p=4):
    scale = 1.0 / np.sqrt(width_in)
    return ScoringHead(
        Wp=nk.leaf(rng.uniform(-scale, scale, size=(width_in, p))),
        bp=nk.leaf(np.zeros(p)),
        Wo=nk.leaf(rng.uniform(-0.5, 0.5, size=(p, 2))),
        bo=nk.leaf(np.zeros(2)),
    )


def test_bias_only_score():
    head = ScoringHead(
        Wp=nk.leaf(np.zeros((6, 4))),
        bp=nk.leaf(np.zeros(4)),
        Wo=nk.leaf(np.zeros((4, 2))),
        bo=nk.leaf(np.array([0.3, 0.7])),
    )
    logits = score(head, nk.leaf(np.zeros((3, 5, 6))))
    npt.assert_allclose(cm_scores(logits.value), np.full(3, 0.4), rtol=1e-15)


def test_batch_permutation_equivariance():
    rng = np.random.default_rng(0)
    head = make_head(rng, width_in=6)
    fused = rng.normal(size=(5, 3, 6))
    base = cm_scores(score(head, nk.leaf(fused)).value)
    perm = rng.permutation(5)
    permuted = cm_scores(score(head, nk.leaf(fused[perm])).value)
    npt.assert_array_equal(permuted, base[perm])


def test_frame_permutation_invariance():
    rng = np.random.default_rng(1)
    head = make_head(rng, width_in=6)
    fused = rng.normal(size=(2, 7, 6))
    base = score(head, nk.leaf(fused)).value
    shuffled = fused[:, rng.permutation(7), :]
    after = score(head, nk.leaf(shuffled)).value
    npt.assert_allclose(after, base, rtol=0, atol=1e-12)


def test_score_is_deterministic():
    rng = np.random.default_rng(2)
    head = make_head(rng, width_in=4)
    fused = rng.normal(size=(3, 2, 4))
    first = score(head, nk.leaf(fused)).value
    assert all(np.array_equal(first, score(head, nk.leaf(fused)).value) for _ in range(3))


def test_head_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    head = make_head(rng, width_in=6)
    fused = rng.normal(size=(3, 4, 6))
    labels = np.array([0, 1, 0])

    def run():
        return nk.cross_entropy_with_logits(score(head, nk.leaf(fused)), labels)

    nk.backward(run())
    for name, node in (("Wp", head.Wp), ("bp", head.bp), ("Wo", head.Wo), ("bo", head.bo)):
        fd = central_diff(lambda: run().value, node.value)
        assert rel_err(node.grad, fd) < 1e-4, name


def test_score_shape_errors():
    rng = np.random.default_rng(4)
    head = make_head(rng, width_in=6)
    with pytest.raises(nk.ShapeError):
        score(head, nk.leaf(np.zeros((3, 6))))
    with pytest.raises(nk.ShapeError):
        score(head, nk.leaf(np.zeros((3, 4, 7))))
