"""Linear + L2-normalize feature generators for both modalities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng

IMAGE = "image"
TEXT = "text"
MODALITIES = (IMAGE, TEXT)
_NORM_FLOOR = 1e-12


@dataclass
class GeneratorParams:
    """Projection ``(d_in, D)`` and bias ``(D,)`` per modality."""

    A_img: np.ndarray
    b_img: np.ndarray
    A_txt: np.ndarray
    b_txt: np.ndarray

    BLOCKS = ("A_img", "b_img", "A_txt", "b_txt")

    def __post_init__(self):
        if self.A_img.shape[1] != self.A_txt.shape[1]:
            raise ValueError("both modalities must project to the same dimension")
        if self.b_img.shape != (self.dim,) or self.b_txt.shape != (self.dim,):
            raise ValueError("bias shape must be (D,)")

    @classmethod
    def init(cls, d_img: int, d_txt: int, dim: int, rng: Rng) -> "GeneratorParams":
        a_img = 1.0 / np.sqrt(d_img)
        a_txt = 1.0 / np.sqrt(d_txt)
        return cls(
            A_img=rng.uniform((d_img, dim), -a_img, a_img),
            b_img=np.zeros(dim),
            A_txt=rng.uniform((d_txt, dim), -a_txt, a_txt),
            b_txt=np.zeros(dim),
        )

    @property
    def dim(self) -> int:
        return self.A_img.shape[1]

    def blocks(self) -> dict:
        return {name: getattr(self, name) for name in self.BLOCKS}

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(**{k: v.copy() for k, v in self.blocks().items()})

    def projection(self, modality: str):
        if modality == IMAGE:
            return self.A_img, self.b_img
        if modality == TEXT:
            return self.A_txt, self.b_txt
        raise ValueError(f"unknown modality {modality!r}")


@dataclass
class EmbeddedSet:
    vectors: np.ndarray  # (rows, D), unit rows
    pair_id: int
    modality: str

    def __len__(self):
        return self.vectors.shape[0]


def encode_rows(A, b, X):
    """Project and L2-normalize the rows of ``X``; returns ``(Y, norms)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != A.shape[0]:
        raise ValueError(f"raw feature dim {X.shape[-1]} does not match projection input {A.shape[0]}")
    H = X @ A + b
    norms = np.linalg.norm(H, axis=1)
    if np.any(norms < _NORM_FLOOR):
        raise FloatingPointError("projected feature has zero norm; cannot normalize")
    return H / norms[:, None], norms


def encode_rows_backward(A, X, Y, norms, G):
    """Gradients of ``sum(G * Y)`` w.r.t. ``A``, ``b`` and ``X``.

    The normalization Jacobian projects ``G`` onto the tangent space of
    each output row: ``dH = (G - Y (Y . G)) / |H|``.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.shape != Y.shape:
        raise ValueError(f"upstream gradient shape {G.shape} != output shape {Y.shape}")
    dH = (G - Y * np.sum(Y * G, axis=1, keepdims=True)) / norms[:, None]
    return np.asarray(X).T @ dH, dH.sum(axis=0), dH @ A.T


def encode(params: GeneratorParams, raw) -> EmbeddedSet:
    A, b = params.projection(raw.modality)
    Y, _ = encode_rows(A, b, raw.features)
    return EmbeddedSet(Y, raw.id, raw.modality)


def encode_backward(params: GeneratorParams, raw, upstream_grad):
    """Returns ``(grad_theta, grad_raw)``; ``grad_theta`` maps block name to gradient.

    Blocks belonging to the other modality get zero gradients.
    """
    A, b = params.projection(raw.modality)
    Y, norms = encode_rows(A, b, raw.features)
    gA, gb, gX = encode_rows_backward(A, raw.features, Y, norms, upstream_grad)
    grads = {k: np.zeros_like(v) for k, v in params.blocks().items()}
    suffix = "img" if raw.modality == IMAGE else "txt"
    grads["A_" + suffix] = gA
    grads["b_" + suffix] = gb
    return grads, gX


class PackedBatch:
    """Variable-length feature sets flattened for one projection call.

    ``padded`` has shape ``(k, L, D)`` with ``mask`` marking real rows,
    ``L`` being the longest set in the batch.
    """

    def __init__(self, params: GeneratorParams, matrices, modality: str):
        self.modality = modality
        self.lengths = np.array([m.shape[0] for m in matrices])
        if np.any(self.lengths < 1):
            raise ValueError("feature sets must have at least one row")
        self.X = np.concatenate(matrices, axis=0)
        self.owner = np.repeat(np.arange(len(matrices)), self.lengths)
        offsets = np.concatenate([[0], np.cumsum(self.lengths)[:-1]])
        self.pos = np.arange(self.X.shape[0]) - offsets[self.owner]
        A, b = params.projection(modality)
        self.Y, self.norms = encode_rows(A, b, self.X)
        k, L = len(matrices), int(self.lengths.max())
        self.padded = np.zeros((k, L, A.shape[1]))
        self.padded[self.owner, self.pos] = self.Y
        self.mask = np.zeros((k, L), dtype=bool)
        self.mask[self.owner, self.pos] = True

    def rows_of(self, i: int) -> np.ndarray:
        return self.padded[i, : self.lengths[i]]

    def backward(self, params: GeneratorParams, grad_padded):
        """Accumulate gradient w.r.t. this modality's projection blocks."""
        A, _ = params.projection(self.modality)
        G = grad_padded[self.owner, self.pos]
        gA, gb, _ = encode_rows_backward(A, self.X, self.Y, self.norms, G)
        return gA, gb
