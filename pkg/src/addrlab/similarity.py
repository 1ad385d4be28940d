"""Set-to-set similarity, hard-negative mining and the hinge triplet loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricParams:
    """Temperature of the smooth-max, stored as ``rho = log(tau)``."""

    rho: float = float(np.log(10.0))

    @classmethod
    def from_tau(cls, tau: float) -> "MetricParams":
        if not tau > 0:
            raise ValueError("tau must be positive")
        return cls(float(np.log(tau)))

    @property
    def tau(self) -> float:
        return float(np.exp(self.rho))


@dataclass
class SimMatrix:
    scores: np.ndarray
    image_ids: list = field(default_factory=list)
    sentence_ids: list = field(default_factory=list)

    @property
    def shape(self):
        return self.scores.shape


def smoothmax(s, tau: float, axis: int = 0, mask=None):
    """``(1/tau) log sum exp(tau s)`` along ``axis``; masked entries are excluded."""
    s = np.asarray(s, dtype=np.float64)
    z = tau * s
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    zmax = np.max(z, axis=axis, keepdims=True)
    lse = zmax + np.log(np.sum(np.exp(z - zmax), axis=axis, keepdims=True))
    return np.squeeze(lse, axis=axis) / tau


def _as_rows(x):
    return x.vectors if hasattr(x, "vectors") else np.asarray(x, dtype=np.float64)


def sim(V, W, metric: MetricParams) -> float:
    """Mean over words of the smooth-max over regions of cosine scores."""
    V, W = _as_rows(V), _as_rows(W)
    if V.shape[0] == 0 or W.shape[0] == 0:
        raise ValueError("empty feature set")
    if V.shape[1] != W.shape[1]:
        raise ValueError(f"dimension mismatch: {V.shape[1]} vs {W.shape[1]}")
    s = V @ W.T  # (n, m)
    return float(np.mean(smoothmax(s, metric.tau, axis=0)))


def score_padded(V, vmask, W, wmask, tau: float, chunk: int = 64) -> np.ndarray:
    """All-pairs similarity between padded image sets and padded sentence sets.

    ``V`` is ``(a, n, D)``, ``W`` is ``(b, m, D)``; the result is ``(a, b)``.
    """
    n_w = wmask.sum(axis=1)
    out = np.empty((V.shape[0], W.shape[0]))
    for start in range(0, V.shape[0], chunk):
        Vc = V[start : start + chunk]
        s = np.einsum("and,bmd->abnm", Vc, W, optimize=True)
        sm = smoothmax(s, tau, axis=2, mask=vmask[start : start + chunk, None, :, None])
        out[start : start + chunk] = np.where(wmask[None], sm, 0.0).sum(axis=2) / n_w[None]
    return out


def sim_matrix(images, sentences, metric: MetricParams) -> SimMatrix:
    if not images or not sentences:
        raise ValueError("sim_matrix needs nonempty inputs")
    scores = np.array([[sim(v, w, metric) for w in sentences] for v in images])
    return SimMatrix(
        scores,
        [getattr(v, "pair_id", i) for i, v in enumerate(images)],
        [getattr(w, "pair_id", j) for j, w in enumerate(sentences)],
    )


def _scores(M):
    return M.scores if isinstance(M, SimMatrix) else np.asarray(M, dtype=np.float64)


def hard_negatives(M, p: int):
    """Hardest mismatched sentence ``q`` for image ``p`` and image ``r`` for sentence ``p``.

    Ties resolve to the lowest index.
    """
    S = _scores(M)
    k = S.shape[0]
    if k < 2:
        raise ValueError("hard negatives need a batch of at least 2")
    row = S[p].copy()
    row[p] = -np.inf
    col = S[:, p].copy()
    col[p] = -np.inf
    return int(np.argmax(row)), int(np.argmax(col))


def all_hard_negatives(M):
    S = _scores(M)
    k = S.shape[0]
    if k < 2:
        raise ValueError("hard negatives need a batch of at least 2")
    masked = np.where(np.eye(k, dtype=bool), -np.inf, S)
    return np.argmax(masked, axis=1), np.argmax(masked, axis=0)


def triplet_loss(M, delta: float, return_negatives: bool = False):
    """Batch mean of the two hardest-negative hinges; returns ``(loss, grad_M)``.

    The subgradient is zero where a hinge argument is ``<= 0``; the argmax
    choice is held fixed.
    """
    S = _scores(M)
    k = S.shape[0]
    if S.shape != (k, k):
        raise ValueError("triplet loss needs a square aligned similarity matrix")
    if delta < 0:
        raise ValueError("margin must be non-negative")
    q, r = all_hard_negatives(S)
    idx = np.arange(k)
    pos = S[idx, idx]
    h_i2t = delta - pos + S[idx, q]
    h_t2i = delta - pos + S[r, idx]
    act_i2t = h_i2t > 0
    act_t2i = h_t2i > 0
    loss = float((np.where(act_i2t, h_i2t, 0.0) + np.where(act_t2i, h_t2i, 0.0)).sum() / k)
    grad = np.zeros_like(S)
    w1 = act_i2t / k
    w2 = act_t2i / k
    np.add.at(grad, (idx, idx), -(w1 + w2))
    np.add.at(grad, (idx, q), w1)
    np.add.at(grad, (r, idx), w2)
    if return_negatives:
        return loss, grad, q, r
    return loss, grad


def pair_scores_backward(V, vmask, W, wmask, tau: float, grad_M):
    """Backpropagate ``grad_M`` (over image rows x sentence cols) to the padded sets.

    Only nonzero entries of ``grad_M`` are visited. Returns
    ``(grad_V, grad_W, grad_rho)`` with ``rho = log(tau)``.
    """
    rows, cols = np.nonzero(grad_M)
    gV = np.zeros_like(V)
    gW = np.zeros_like(W)
    if rows.size == 0:
        return gV, gW, 0.0
    coef = grad_M[rows, cols]
    Va, Wb = V[rows], W[cols]  # (E, n, D), (E, m, D)
    vm = vmask[rows][:, :, None]  # (E, n, 1)
    wm = wmask[cols]  # (E, m)
    n_w = wm.sum(axis=1)
    s = np.einsum("end,emd->enm", Va, Wb)
    z = np.where(vm, tau * s, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    p = e / e.sum(axis=1, keepdims=True)
    smax = (zmax[:, 0] + np.log(e.sum(axis=1))) / tau  # (E, m)
    weight = (coef / n_w)[:, None] * wm  # (E, m)
    ds = p * weight[:, None, :]  # d loss / d s_enm
    np.add.at(gV, rows, np.einsum("enm,emd->end", ds, Wb))
    np.add.at(gW, cols, np.einsum("enm,end->emd", ds, Va))
    # d smoothmax / d rho = sum_i p_i s_i - smoothmax
    drho = (np.sum(p * s, axis=1) - smax) * weight
    return gV, gW, float(drho.sum())
