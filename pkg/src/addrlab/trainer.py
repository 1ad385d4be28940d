"""Alternating discriminator / generator training with hard-negative wiring.

One outer epoch runs a full discriminator pass over the training images
(each image with all of its captions as its domain), then a full generator
pass over every (image, caption) pair. Batches never repeat an image.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .discriminators import Discriminator, DiscriminatorBank, adv_grads, adv_loss, get_or_init
from .encoders import IMAGE, TEXT, GeneratorParams, PackedBatch
from .evaluation import evaluate
from .exceptions import DimensionMismatchError, FormatError, NumericalError
from .numerics import AdamState, Rng, adam_step
from .regularizer import RegInputs, reg_loss
from .similarity import MetricParams, all_hard_negatives, pair_scores_backward, score_padded, triplet_loss

VARIANTS = ("base", "united", "multiple", "addr")
UNITED_ID = (1 << 64) - 1
PHASE_DISC = "disc"
PHASE_GEN = "gen"


@dataclass
class TrainerConfig:
    delta: float = 0.2
    alpha: float = 0.05
    beta: float = 0.1
    gamma: float = 0.4
    lr: float = 0.001
    disc_lr: float = 0.01
    lr_decay: float = 0.2
    lr_interval: int = 8000
    lr_floor: float = 1e-5
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    variant: str = "addr"
    tau: float = 10.0
    dim: int = 64
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    learn_tau: bool = True
    schedule: str = "epoch"  # or "batch": alternate the two phases every minibatch
    literal_eq9: bool = False
    patience: int = 10
    early_stop: bool = True
    keep_best: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.delta, self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("margins and loss weights must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not (self.lr > 0 and self.disc_lr > 0 and self.tau > 0):
            raise ValueError("learning rates and tau must be positive")
        if self.schedule not in ("epoch", "batch"):
            raise ValueError("schedule must be 'epoch' or 'batch'")

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.variant == "base" else self.beta

    @property
    def effective_gamma(self) -> float:
        return self.gamma if self.variant == "addr" else 0.0

    @property
    def uses_discriminators(self) -> bool:
        # with no adversarial weight the bank cannot influence the generators
        return self.effective_beta > 0

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def lr_at(config: TrainerConfig, iteration: int, base: float | None = None) -> float:
    """Step decay by ``lr_decay`` every ``lr_interval`` iterations, clamped at ``lr_floor``."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    base = config.lr if base is None else base
    lr = base * config.lr_decay ** (iteration // config.lr_interval)
    return min(base, max(config.lr_floor, lr))


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # (iter, phase, l_rank, l_adv, l_reg, lr, seconds)
    epochs: list = field(default_factory=list)  # (epoch, r1_i2t, r1_t2i, rsum)

    COLUMNS = ("iter", "phase", "l_rank", "l_adv", "l_reg", "lr", "seconds")

    def append(self, it, phase, l_rank, l_adv, l_reg, lr, seconds):
        if self.records and it <= self.records[-1][0]:
            raise ValueError("iteration counter must increase")
        self.records.append((int(it), phase, float(l_rank), float(l_adv), float(l_reg), float(lr), float(seconds)))

    def deterministic_view(self):
        """Everything except wall-clock time."""
        return [r[:6] for r in self.records], [tuple(e) for e in self.epochs]

    def fingerprint(self) -> str:
        recs, eps = self.deterministic_view()
        h = hashlib.sha256()
        for r in recs:
            h.update(struct.pack("<Q", r[0]) + r[1].encode() + struct.pack("<4d", *r[2:]))
        for e in eps:
            h.update(struct.pack("<Q3d", e[0], *e[1:]))
        return h.hexdigest()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.COLUMNS)
            for r in self.records:
                wr.writerow([r[0], r[1]] + [repr(x) for x in r[2:]])

    def to_json(self) -> str:
        return json.dumps({"records": self.records, "epochs": self.epochs})

    @classmethod
    def from_json(cls, text: str) -> "TrainLog":
        d = json.loads(text)
        return cls([tuple(r) for r in d["records"]], [tuple(e) for e in d["epochs"]])


@dataclass
class Batch:
    """Aligned minibatch: ``images[p]`` is paired with ``sentences[p]``.

    ``groups[p]`` holds every caption of image ``p`` and defines its
    discriminator domain in the discriminator phase; ``pair_ids[p]`` keys the bank.
    """

    pair_ids: list
    images: list
    sentences: list
    groups: list = None

    def __len__(self):
        return len(self.pair_ids)

    @classmethod
    def from_dataset(cls, dataset, image_ids, caption_ids, with_groups=False):
        groups = None
        if with_groups:
            groups = [[dataset.sentence(c).features for c in dataset.pairs[i]] for i in image_ids]
        return cls(
            list(image_ids),
            [dataset.image(i).features for i in image_ids],
            [dataset.sentence(c).features for c in caption_ids],
            groups,
        )


def _disc_id(config, pair_id):
    return UNITED_ID if config.variant == "united" else int(pair_id)


def _stack_discs(bank, ids, dim):
    """Read-only lookup; unseen ids behave as zero-initialized discriminators."""
    found = [bank[i] if bank is not None and i in bank else Discriminator.zeros(dim) for i in ids]
    return np.stack([f.W for f in found]), np.array([f.b for f in found])


def _adv_batch(Wd, bd, V, vmask, Ws, wmask):
    """Per-item adversarial loss and its feature gradients for padded sets."""
    zr = np.einsum("knd,kd->kn", V, Wd) + bd[:, None]
    zw = np.einsum("kmd,kd->km", Ws, Wd) + bd[:, None]
    loss = np.where(vmask, np.logaddexp(0.0, zr), 0.0).sum(1) + np.where(wmask, np.logaddexp(0.0, -zw), 0.0).sum(1)
    rr = np.where(vmask, 1.0 / (1.0 + np.exp(-zr)), 0.0)
    rw = np.where(wmask, 1.0 / (1.0 + np.exp(-zw)) - 1.0, 0.0)
    return loss, rr[..., None] * Wd[:, None, :], rw[..., None] * Wd[:, None, :]


def generator_objective(batch: Batch, gen: GeneratorParams, metric: MetricParams,
                        bank: DiscriminatorBank | None, config: TrainerConfig, with_grads: bool = True):
    """``L_rank - beta * mean_p L_adv`` on the batch and its gradients.

    Returns ``(objective, stats, grads)`` where ``grads`` maps generator block
    names and ``"rho"`` to arrays, or is None when ``with_grads`` is false.
    """
    k = len(batch)
    imgs = PackedBatch(gen, batch.images, IMAGE)
    caps = PackedBatch(gen, batch.sentences, TEXT)
    tau = metric.tau
    M = score_padded(imgs.padded, imgs.mask, caps.padded, caps.mask, tau)
    l_rank, gM = triplet_loss(M, config.delta)
    beta = config.effective_beta
    l_adv = 0.0
    if beta > 0:
        Wd, bd = _stack_discs(bank, [_disc_id(config, p) for p in batch.pair_ids], gen.dim)
        adv, aV, aW = _adv_batch(Wd, bd, imgs.padded, imgs.mask, caps.padded, caps.mask)
        l_adv = float(adv.mean())
    stats = {"l_rank": l_rank, "l_adv": l_adv, "l_reg": 0.0}
    if not with_grads:
        return l_rank - beta * l_adv, stats, None
    gV, gW, g_rho = pair_scores_backward(imgs.padded, imgs.mask, caps.padded, caps.mask, tau, gM)
    if beta > 0:
        gV = gV - (beta / k) * aV
        gW = gW - (beta / k) * aW
    gA_img, gb_img = imgs.backward(gen, gV)
    gA_txt, gb_txt = caps.backward(gen, gW)
    grads = {"A_img": gA_img, "b_img": gb_img, "A_txt": gA_txt, "b_txt": gb_txt,
             "rho": np.array(g_rho if config.learn_tau else 0.0)}
    return l_rank - beta * l_adv, stats, grads


def discriminator_objective(batch: Batch, gen: GeneratorParams, metric: MetricParams,
                            bank: DiscriminatorBank, config: TrainerConfig, with_grads: bool = True):
    """``mean_p [L_adv(p) + gamma * L_reg(p, q, r)]`` and per-discriminator gradients.

    Generators are read-only here. Returns ``(objective, stats, grads)`` with
    ``grads[disc_id]`` a ``(D + 1,)`` vector ``[dW, db]``.
    """
    k = len(batch)
    imgs = PackedBatch(gen, batch.images, IMAGE)
    caps = PackedBatch(gen, batch.sentences, TEXT)
    M = score_padded(imgs.padded, imgs.mask, caps.padded, caps.mask, metric.tau)
    l_rank, _ = triplet_loss(M, config.delta)
    q_idx, r_idx = all_hard_negatives(M)
    groups = batch.groups if batch.groups is not None else [[s] for s in batch.sentences]
    flat = [s for g in groups for s in g]
    words = PackedBatch(gen, flat, TEXT)
    bounds = np.cumsum([0] + [len(g) for g in groups])
    domains = []
    for p in range(k):
        sel = (words.owner >= bounds[p]) & (words.owner < bounds[p + 1])
        domains.append((imgs.rows_of(p), words.Y[sel]))
    gamma = config.effective_gamma
    ids = [_disc_id(config, p) for p in batch.pair_ids]
    dim = gen.dim
    grads: dict = {}

    def acc(i, gWv, gbv, scale):
        g = grads.setdefault(i, np.zeros(dim + 1))
        g[:dim] += scale * gWv
        g[dim] += scale * gbv

    adv_total, reg_total = 0.0, 0.0
    for p in range(k):
        f_p = get_or_init(bank, ids[p])
        regions, wrd = domains[p]
        adv_total += adv_loss(f_p, regions, wrd)
        if with_grads:
            gWv, gbv, _, _ = adv_grads(f_p, regions, wrd)
            acc(ids[p], gWv, gbv, 1.0 / k)
        if gamma > 0:
            q, r = int(q_idx[p]), int(r_idx[p])
            inputs = RegInputs(domains[p], domains[q], domains[r], f_p,
                               get_or_init(bank, ids[q]), get_or_init(bank, ids[r]),
                               config.alpha, q_is_r=(q == r))
            l1, l2, rg = reg_loss(inputs, literal_eq9=config.literal_eq9)
            reg_total += l1 + l2
            if with_grads:
                for role, idx in (("p", p), ("q", q), ("r", r)):
                    acc(ids[idx], rg[role][0], rg[role][1], gamma / k)
    stats = {"l_rank": l_rank, "l_adv": adv_total / k, "l_reg": reg_total / k}
    return (adv_total + gamma * reg_total) / k, stats, grads if with_grads else None


class TrainerState:
    """Everything needed to continue a run bit-exactly."""

    def __init__(self, config: TrainerConfig, d_img: int, d_txt: int):
        self.config = config
        init_rng = Rng.stream(config.seed, 0)
        self.gen = GeneratorParams.init(d_img, d_txt, config.dim, init_rng)
        self.metric = MetricParams.from_tau(config.tau)
        self.bank = DiscriminatorBank(config.dim)
        self.gen_opt = {k: self._adam(v.shape) for k, v in self.gen.blocks().items()}
        self.gen_opt["rho"] = self._adam(())
        self.disc_opt: dict = {}
        self.rng_gen = Rng.stream(config.seed, 1)
        self.rng_disc = Rng.stream(config.seed, 2)
        self.iteration = 0
        self.epoch = 0
        self.best_rsum = -np.inf
        self.bad_evals = 0
        self.stopped = False
        self.best_gen = self.gen.copy()
        self.best_rho = self.metric.rho
        self.log = TrainLog()

    def _adam(self, shape):
        c = self.config
        return AdamState(shape, c.adam_beta1, c.adam_beta2, c.adam_eps)

    def disc_adam(self, disc_id):
        if disc_id not in self.disc_opt:
            self.disc_opt[disc_id] = self._adam((self.config.dim + 1,))
        return self.disc_opt[disc_id]


def _check_finite(value, what, it):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what} ({value}) at iteration {it}")


def discriminator_phase(batch, state: TrainerState):
    """One discriminator update on ``batch``; generator and metric stay frozen."""
    cfg = state.config
    if not cfg.uses_discriminators:
        raise ValueError(f"variant {cfg.variant!r} with beta={cfg.beta} trains no discriminators")
    t0 = time.perf_counter()
    lr = lr_at(cfg, state.iteration, cfg.disc_lr)
    obj, stats, grads = discriminator_objective(batch, state.gen, state.metric, state.bank, cfg)
    _check_finite(obj, "discriminator objective", state.iteration)
    dim = cfg.dim
    for disc_id in sorted(grads):
        f = state.bank[disc_id]
        theta = np.concatenate([f.W, [f.b]])
        theta = adam_step(state.disc_adam(disc_id), theta, grads[disc_id], lr)
        f.W, f.b = theta[:dim], float(theta[dim])
    state.iteration += 1
    state.log.append(state.iteration, PHASE_DISC, stats["l_rank"], stats["l_adv"], stats["l_reg"],
                     lr, time.perf_counter() - t0)
    return stats


def generator_phase(batch, state: TrainerState):
    """One generator/metric update on ``batch``; the bank stays frozen."""
    cfg = state.config
    t0 = time.perf_counter()
    lr = lr_at(cfg, state.iteration)
    obj, stats, grads = generator_objective(batch, state.gen, state.metric, state.bank, cfg)
    _check_finite(obj, "generator objective", state.iteration)
    for name in GeneratorParams.BLOCKS:
        setattr(state.gen, name, adam_step(state.gen_opt[name], getattr(state.gen, name), grads[name], lr))
    if cfg.learn_tau:
        state.metric.rho = float(adam_step(state.gen_opt["rho"], np.array(state.metric.rho), grads["rho"], lr))
    state.iteration += 1
    state.log.append(state.iteration, PHASE_GEN, stats["l_rank"], stats["l_adv"], stats["l_reg"],
                     lr, time.perf_counter() - t0)
    return stats


def _chunks(order, k):
    out = [list(order[i : i + k]) for i in range(0, len(order), k)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2].extend(out.pop())
    return out


def generator_batches(dataset, image_ids, batch_size, rng: Rng):
    """Every (image, caption) pair once, rounds of distinct images per batch."""
    caps = {i: dataset.pairs[i] for i in image_ids}
    perms = {i: rng.permutation(len(caps[i])) for i in image_ids}
    rounds = max(len(c) for c in caps.values())
    batches = []
    for rnd in range(rounds):
        members = [i for i in image_ids if rnd < len(caps[i])]
        order = [members[j] for j in rng.permutation(len(members))]
        for chunk in _chunks(order, batch_size):
            if len(chunk) < 2:
                continue
            batches.append((chunk, [caps[i][perms[i][rnd]] for i in chunk]))
    return batches


def discriminator_batches(dataset, image_ids, batch_size, rng: Rng):
    """Every training image once; the ranking caption of each image is drawn at random."""
    order = [image_ids[j] for j in rng.permutation(len(image_ids))]
    batches = []
    for chunk in _chunks(order, batch_size):
        picks = [dataset.pairs[i][rng.integers(len(dataset.pairs[i]))] for i in chunk]
        batches.append((chunk, picks))
    return batches


@dataclass
class TrainResult:
    gen: GeneratorParams
    metric: MetricParams
    bank: DiscriminatorBank
    log: TrainLog
    state: TrainerState = None


class Trainer:
    def __init__(self, config: TrainerConfig, dataset, state: TrainerState | None = None,
                 callback=None):
        self.config = config
        self.dataset = dataset
        self.train_ids = dataset.image_ids("train") or dataset.image_ids()
        if len(self.train_ids) < 2:
            raise ValueError("need at least 2 training pairs")
        self.val_ids = dataset.image_ids("val")
        self.state = state or TrainerState(config, dataset.d_img, dataset.d_txt)
        if self.state.gen.A_img.shape[0] != dataset.d_img or self.state.gen.A_txt.shape[0] != dataset.d_txt:
            raise DimensionMismatchError("dataset feature dims do not match the model")
        self.callback = callback

    def run_epoch(self):
        st, cfg, ds = self.state, self.config, self.dataset
        gen_batches = generator_batches(ds, self.train_ids, cfg.batch_size, st.rng_gen)
        disc_batches = []
        if cfg.uses_discriminators:
            disc_batches = discriminator_batches(ds, self.train_ids, cfg.batch_size, st.rng_disc)
        if cfg.schedule == "epoch":
            for imgs, caps in disc_batches:
                discriminator_phase(Batch.from_dataset(ds, imgs, caps, with_groups=True), st)
            for imgs, caps in gen_batches:
                generator_phase(Batch.from_dataset(ds, imgs, caps), st)
        else:
            for j in range(max(len(gen_batches), len(disc_batches))):
                if j < len(disc_batches):
                    imgs, caps = disc_batches[j]
                    discriminator_phase(Batch.from_dataset(ds, imgs, caps, with_groups=True), st)
                if j < len(gen_batches):
                    imgs, caps = gen_batches[j]
                    generator_phase(Batch.from_dataset(ds, imgs, caps), st)
        st.epoch += 1
        self._validate()

    def _validate(self):
        st, cfg = self.state, self.config
        if not self.val_ids:
            st.best_gen, st.best_rho = st.gen.copy(), st.metric.rho
            return
        rep = evaluate(st.gen, st.metric, self.dataset, "val")
        st.log.epochs.append((st.epoch, rep.r1_i2t, rep.r1_t2i, rep.rsum))
        if rep.rsum > st.best_rsum:
            st.best_rsum, st.bad_evals = rep.rsum, 0
            st.best_gen, st.best_rho = st.gen.copy(), st.metric.rho
        else:
            st.bad_evals += 1
            if cfg.early_stop and st.bad_evals >= cfg.patience:
                st.stopped = True
        if self.callback:
            self.callback(st, rep)

    def fit(self, epochs: int | None = None) -> TrainResult:
        """Run until ``epochs`` total outer epochs (default ``config.epochs``) or early stop."""
        target = self.config.epochs if epochs is None else epochs
        while self.state.epoch < target and not self.state.stopped:
            self.run_epoch()
        return self.result()

    def result(self) -> TrainResult:
        st = self.state
        if self.config.keep_best and self.val_ids:
            gen, metric = st.best_gen.copy(), MetricParams(st.best_rho)
        else:
            gen, metric = st.gen.copy(), MetricParams(st.metric.rho)
        return TrainResult(gen, metric, st.bank, st.log, st)


def train(config: TrainerConfig, dataset, callback=None) -> TrainResult:
    return Trainer(config, dataset, callback=callback).fit()


# --- checkpoints -------------------------------------------------------------

CKPT_MAGIC = b"ADDRCKPT"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sII32s")


def _block(name: str, kind: bytes, payload: bytes, shape=()) -> bytes:
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + kind + struct.pack("<B", len(shape))
    head += b"".join(struct.pack("<Q", s) for s in shape)
    return head + struct.pack("<Q", len(payload)) + payload


def _array_block(name, arr):
    arr = np.array(arr, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
    return _block(name, b"d", arr.tobytes(), arr.shape)


def checkpoint_save(path, state: TrainerState) -> None:
    path = Path(path)
    if not str(path) or path.name == "":
        raise OSError("empty checkpoint path")
    cfg = state.config
    parts = [_block("config", b"j", json.dumps(cfg.to_dict(), sort_keys=True).encode())]
    for name, arr in state.gen.blocks().items():
        parts.append(_array_block("gen." + name, arr))
    for name, arr in state.best_gen.blocks().items():
        parts.append(_array_block("best." + name, arr))
    parts.append(_array_block("metric.rho", np.array([state.metric.rho, state.best_rho])))
    parts.append(_block("bank", b"b", state.bank.to_bytes()))
    for name, opt in list(state.gen_opt.items()) + [(f"disc.{i}", o) for i, o in sorted(state.disc_opt.items())]:
        parts.append(_array_block(f"adam.{name}.m", opt.m))
        parts.append(_array_block(f"adam.{name}.v", opt.v))
        parts.append(_block(f"adam.{name}.t", b"Q", struct.pack("<Q", opt.t)))
    counters = struct.pack("<QQQQQ", state.rng_gen.state, state.rng_disc.state, state.iteration,
                           state.epoch, state.bad_evals)
    parts.append(_block("counters", b"Q", counters))
    parts.append(_block("flags", b"j", json.dumps({"best_rsum": state.best_rsum if np.isfinite(state.best_rsum) else None,
                                                   "stopped": state.stopped}).encode()))
    parts.append(_block("log", b"j", state.log.to_json().encode()))
    header = _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, cfg.dim, bytes.fromhex(cfg.hash()).ljust(32, b"\0"))
    path.write_bytes(header + b"".join(parts))


def _read_blocks(data: bytes, off: int) -> dict:
    blocks = {}
    try:
        while off < len(data):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off : off + nlen].decode()
            off += nlen
            kind = data[off : off + 1]
            (ndim,) = struct.unpack_from("<B", data, off + 1)
            off += 2
            shape = struct.unpack_from("<" + "Q" * ndim, data, off)
            off += 8 * ndim
            (size,) = struct.unpack_from("<Q", data, off)
            off += 8
            payload = data[off : off + size]
            if len(payload) != size:
                raise FormatError(f"checkpoint block {name!r} truncated")
            off += size
            blocks[name] = (kind, shape, payload)
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError("corrupted checkpoint") from exc
    return blocks


def checkpoint_load(path, expected_dim: int | None = None) -> TrainerState:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise FormatError("checkpoint truncated in header")
    magic, version, dim, chash = _CKPT_HEADER.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    blocks = _read_blocks(data, _CKPT_HEADER.size)
    try:
        cfg = TrainerConfig(**json.loads(blocks["config"][2]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError("checkpoint config block missing or invalid") from exc
    if dim != cfg.dim:
        raise DimensionMismatchError(f"header dim {dim} != config dim {cfg.dim}")
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatchError(f"checkpoint dim {dim} != expected {expected_dim}")
    if chash[:8] != bytes.fromhex(cfg.hash()):
        raise FormatError("checkpoint config hash does not match its config block")

    def arr(name):
        try:
            kind, shape, payload = blocks[name]
        except KeyError as exc:
            raise FormatError(f"checkpoint missing block {name!r}") from exc
        if kind != b"d" or len(payload) != 8 * int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"bad checkpoint block {name!r}")
        return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)

    gen = GeneratorParams(*(arr("gen." + n) for n in GeneratorParams.BLOCKS))
    if gen.dim != dim:
        raise DimensionMismatchError(f"generator dim {gen.dim} != header dim {dim}")
    state = TrainerState(cfg, gen.A_img.shape[0], gen.A_txt.shape[0])
    state.gen = gen
    state.best_gen = GeneratorParams(*(arr("best." + n) for n in GeneratorParams.BLOCKS))
    rho = arr("metric.rho")
    state.metric, state.best_rho = MetricParams(float(rho[0])), float(rho[1])
    state.bank = DiscriminatorBank.from_bytes(blocks["bank"][2], dim=dim)

    def opt(name):
        m, v = arr(f"adam.{name}.m"), arr(f"adam.{name}.v")
        (t,) = struct.unpack("<Q", blocks[f"adam.{name}.t"][2])
        return AdamState(m.shape, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, int(t), m, v)

    state.gen_opt = {n: opt(n) for n in list(GeneratorParams.BLOCKS) + ["rho"]}
    disc_names = sorted({int(k.split(".")[2]) for k in blocks if k.startswith("adam.disc.")})
    state.disc_opt = {i: opt(f"disc.{i}") for i in disc_names}
    g, d, it, ep, bad = struct.unpack("<QQQQQ", blocks["counters"][2])
    state.rng_gen, state.rng_disc = Rng(g), Rng(d)
    state.iteration, state.epoch, state.bad_evals = it, ep, bad
    flags = json.loads(blocks["flags"][2])
    state.best_rsum = -np.inf if flags["best_rsum"] is None else flags["best_rsum"]
    state.stopped = flags["stopped"]
    state.log = TrainLog.from_json(blocks["log"][2].decode())
    return state


def resume(path, dataset, epochs: int | None = None) -> TrainResult:
    state = checkpoint_load(path)
    return Trainer(state.config, dataset, state=state).fit(epochs)
