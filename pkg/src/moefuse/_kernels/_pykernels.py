"""Pure-numpy implementations of the row-wise hot kernels.

Same contracts as the compiled versions in ``_ckernels.pyx``; selected as a
fallback at import time when the extension is unavailable.
"""

import numpy as np


def topk_mask(logits, k):
    """Boolean mask of the k largest entries per row, ties to the lowest index.

    logits: (D, N) float64. Returns (D, N) uint8 with exactly min(k, N) ones
    per row.
    """
    n = logits.shape[1]
    k = min(k, n)
    # stable sort on negated logits: equal logits keep ascending column order
    order = np.argsort(-logits, axis=1, kind="stable")
    mask = np.zeros(logits.shape, dtype=np.uint8)
    np.put_along_axis(mask, order[:, :k], 1, axis=1)
    return mask


def masked_softmax_fwd(logits, mask):
    """Row softmax restricted to mask==1 entries; exact zeros elsewhere.

    Max-subtracted for stability. Every row of mask must have >=1 set entry.
    """
    masked = np.where(mask.astype(bool), logits, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.where(mask.astype(bool), np.exp(logits - m), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def masked_softmax_bwd(probs, mask, grad_out):
    """Gradient of masked_softmax_fwd w.r.t. the logits.

    probs are the forward outputs. Masked-off entries get exactly zero
    gradient (probs is already exactly zero there).
    """
    dot = (grad_out * probs).sum(axis=1, keepdims=True)
    return probs * (grad_out - dot)


def gather_rows(src, rows):
    """Copy of src[rows]; src is (D, S), rows int indices."""
    return src[rows].copy()


def scatter_add_rows(dst, rows, src):
    """In-place dst[rows] += src. rows must be unique."""
    dst[rows] += src
