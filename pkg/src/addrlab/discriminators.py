"""Per-pair logistic domain classifiers and their persistent table.

Label convention: word features are class 1, region features class 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit as _sigmoid

from .exceptions import DimensionMismatchError, FormatError

BANK_MAGIC = b"ADDRBANK"
BANK_VERSION = 1
_HEADER = struct.Struct("<8sIIQ")


@dataclass
class Discriminator:
    W: np.ndarray
    b: float = 0.0

    @classmethod
    def zeros(cls, dim: int) -> "Discriminator":
        return cls(np.zeros(dim), 0.0)

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def copy(self) -> "Discriminator":
        return Discriminator(self.W.copy(), float(self.b))

    def __neg__(self):
        return Discriminator(-self.W, -self.b)

    def __eq__(self, other):
        return (
            isinstance(other, Discriminator)
            and np.array_equal(self.W, other.W)
            and self.b == other.b
        )


def _rows(x):
    return x.vectors if hasattr(x, "vectors") else np.asarray(x, dtype=np.float64)


def _check(f: Discriminator, *sets):
    for s in sets:
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("feature set must be a nonempty 2-D array")
        if s.shape[1] != f.dim:
            raise ValueError(f"feature dim {s.shape[1]} != discriminator dim {f.dim}")


def predict(f: Discriminator, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != f.dim:
        raise ValueError(f"feature dim {x.shape[-1]} != discriminator dim {f.dim}")
    return _sigmoid(x @ f.W + f.b)


def adv_loss(f: Discriminator, V, W_words) -> float:
    """Summed binary cross-entropy, regions as class 0 and words as class 1."""
    V, Ww = _rows(V), _rows(W_words)
    _check(f, V, Ww)
    z_words = Ww @ f.W + f.b
    z_regions = V @ f.W + f.b
    # -log sigma(z) = log(1 + e^-z); -log(1 - sigma(z)) = log(1 + e^z)
    return float(np.logaddexp(0.0, -z_words).sum() + np.logaddexp(0.0, z_regions).sum())


def adv_grads(f: Discriminator, V, W_words):
    """Returns ``(grad_W, grad_b, grad_V, grad_Wwords)`` of :func:`adv_loss`."""
    V, Ww = _rows(V), _rows(W_words)
    _check(f, V, Ww)
    r_regions = _sigmoid(V @ f.W + f.b)  # sigma - 0
    r_words = _sigmoid(Ww @ f.W + f.b) - 1.0  # sigma - 1
    grad_W = V.T @ r_regions + Ww.T @ r_words
    grad_b = float(r_regions.sum() + r_words.sum())
    return grad_W, grad_b, np.outer(r_regions, f.W), np.outer(r_words, f.W)


class DiscriminatorBank:
    """Table of discriminators keyed by pair (image) id."""

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._table: dict[int, Discriminator] = {}

    def __len__(self):
        return len(self._table)

    def __contains__(self, pair_id):
        return int(pair_id) in self._table

    def __getitem__(self, pair_id) -> Discriminator:
        return self._table[int(pair_id)]

    def __setitem__(self, pair_id, f: Discriminator):
        if f.dim != self.dim:
            raise ValueError(f"discriminator dim {f.dim} != bank dim {self.dim}")
        self._table[int(pair_id)] = Discriminator(np.array(f.W, dtype=np.float64), float(f.b))

    def ids(self):
        return sorted(self._table)

    def items(self):
        for k in self.ids():
            yield k, self._table[k]

    def copy(self) -> "DiscriminatorBank":
        out = DiscriminatorBank(self.dim)
        for k, f in self._table.items():
            out._table[k] = f.copy()
        return out

    def __eq__(self, other):
        return (
            isinstance(other, DiscriminatorBank)
            and self.dim == other.dim
            and self.ids() == other.ids()
            and all(self[k] == other[k] for k in self.ids())
        )

    def to_bytes(self) -> bytes:
        ids = self.ids()
        rec = np.zeros(len(ids), dtype=_record_dtype(self.dim))
        for i, k in enumerate(ids):
            rec[i] = (k, self._table[k].W, self._table[k].b)
        return _HEADER.pack(BANK_MAGIC, BANK_VERSION, self.dim, len(ids)) + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, dim: int | None = None) -> "DiscriminatorBank":
        if len(data) < _HEADER.size:
            raise FormatError("bank file truncated in header")
        magic, version, d, count = _HEADER.unpack_from(data)
        if magic != BANK_MAGIC:
            raise FormatError(f"bad bank magic {magic!r}")
        if version != BANK_VERSION:
            raise FormatError(f"unsupported bank version {version}")
        if dim is not None and d != dim:
            raise DimensionMismatchError(f"bank dim {d} != expected {dim}")
        dt = _record_dtype(d)
        body = data[_HEADER.size :]
        if len(body) != count * dt.itemsize:
            raise FormatError(f"bank body has {len(body)} bytes, expected {count * dt.itemsize}")
        rec = np.frombuffer(body, dtype=dt)
        bank = cls(d)
        for row in rec:
            bank._table[int(row["id"])] = Discriminator(row["W"].astype(np.float64), float(row["b"]))
        return bank


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("W", "<f8", (dim,)), ("b", "<f8")])


def get_or_init(bank: DiscriminatorBank, pair_id, rng=None) -> Discriminator:
    """Stored discriminator for ``pair_id``, zero-initialized on first use.

    ``rng`` is accepted for interface symmetry; zero init consumes no draws.
    """
    if pair_id not in bank:
        bank[pair_id] = Discriminator.zeros(bank.dim)
    return bank[pair_id]


def save_bank(bank: DiscriminatorBank, path) -> None:
    Path(path).write_bytes(bank.to_bytes())


def load_bank(path, dim: int | None = None) -> DiscriminatorBank:
    return DiscriminatorBank.from_bytes(Path(path).read_bytes(), dim=dim)
