"""Finite-difference self-check of every loss component on random tiny instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discriminators import Discriminator, DiscriminatorBank, adv_grads, adv_loss
from .encoders import IMAGE, TEXT, GeneratorParams, PackedBatch
from .numerics import Rng, fd_gradient, rel_error
from .regularizer import RegInputs, domain_risk, reg_loss
from .similarity import MetricParams, pair_scores_backward, score_padded, triplet_loss
from .trainer import Batch, TrainerConfig, discriminator_objective, generator_objective

COMPONENTS = ("triplet", "similarity", "adversarial", "regularizer", "generator", "discriminator")
TOLERANCE = 1e-4
KINK_TOL = 1e-4


@dataclass
class ComponentResult:
    name: str
    max_rel_error: float
    instances: int
    resampled: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def near_kink(M, delta: float, tol: float = KINK_TOL) -> bool:
    """True when a triplet hinge or a hard-negative argmax is within ``tol`` of switching."""
    M = np.asarray(M, dtype=np.float64)
    k = len(M)
    off = np.where(np.eye(k, dtype=bool), -np.inf, M)
    for p in range(k):
        for v in (off[p], off[:, p]):
            top = np.sort(v)[-2:]
            if top[1] - top[0] < tol or abs(delta - M[p, p] + top[1]) < tol:
                return True
    return False


def reg_near_kink(inputs: RegInputs, tol: float = KINK_TOL) -> bool:
    risk = {(d, r): domain_risk(inputs.disc(r), inputs.domain(d)) for d in "pqr" for r in "pqr"}
    terms = [("p", "p", "q"), ("q", "q", "p"), ("r", "r", "p"), ("p", "p", "r")]
    return any(abs(inputs.alpha + risk[(d, o)] - risk[(d, x)]) < tol for d, o, x in terms)


def _unit(X):
    return X / np.linalg.norm(X, axis=-1, keepdims=True)


def _rand_disc(rng, d):
    return Discriminator(rng.normal(d), float(rng.normal()) * 0.5)


class _Sizes:
    def __init__(self, dim=8, n=4, m=3, k=3, d_img=6, d_txt=5):
        self.dim, self.n, self.m, self.k, self.d_img, self.d_txt = dim, n, m, k, d_img, d_txt


def _triplet_instance(rng, s, delta, flip_adv):
    M = rng.uniform((s.k + 1, s.k + 1), -1.0, 1.0)
    if near_kink(M, delta):
        return None
    _, gM = triplet_loss(M, delta)
    return gM.ravel(), fd_gradient(lambda x: triplet_loss(x, delta)[0], M).ravel()


def _similarity_instance(rng, s, delta, flip_adv):
    """Smooth-max similarity pulled back through a random upstream gradient."""
    V = _unit(rng.normal((s.k, s.n, s.dim)))
    W = _unit(rng.normal((s.k, s.m, s.dim)))
    vm, wm = np.ones((s.k, s.n), bool), np.ones((s.k, s.m), bool)
    G = rng.normal((s.k, s.k))
    rho = float(np.log(rng.uniform(None, 2.0, 10.0)))
    gV, gW, g_rho = pair_scores_backward(V, vm, W, wm, np.exp(rho), G)
    nv = V.size

    def f(x):
        Vx = x[:nv].reshape(V.shape)
        Wx = x[nv:-1].reshape(W.shape)
        return float(np.sum(G * score_padded(Vx, vm, Wx, wm, np.exp(x[-1]))))

    x = np.concatenate([V.ravel(), W.ravel(), [rho]])
    return np.concatenate([gV.ravel(), gW.ravel(), [g_rho]]), fd_gradient(f, x)


def _adversarial_instance(rng, s, delta, flip_adv):
    f = _rand_disc(rng, s.dim)
    V = _unit(rng.normal((s.n, s.dim)))
    Ww = _unit(rng.normal((s.m, s.dim)))
    gW, gb, gV, gWw = adv_grads(f, V, Ww)
    analytic = np.concatenate([gW, [gb], gV.ravel(), gWw.ravel()])
    if flip_adv:
        analytic = -analytic
    d = s.dim
    x = np.concatenate([f.W, [f.b], V.ravel(), Ww.ravel()])

    def loss(x):
        return adv_loss(Discriminator(x[:d], x[d]), x[d + 1: d + 1 + V.size].reshape(V.shape),
                        x[d + 1 + V.size:].reshape(Ww.shape))

    return analytic, fd_gradient(loss, x)


def _regularizer_instance(rng, s, delta, flip_adv, literal_eq9=False):
    d = s.dim
    fs, doms = [], []
    for _ in range(3):
        direction = _unit(rng.normal(d))
        fs.append(Discriminator(rng.uniform(None, 0.0, 4.0) * direction + 0.3 * rng.normal(d),
                                float(rng.normal()) * 0.2))
        push = rng.uniform(None, 0.0, 3.0)
        doms.append((_unit(rng.normal((s.n, d)) - push * direction),
                     _unit(rng.normal((s.m, d)) + push * direction)))
    inputs = RegInputs(*doms, *fs, alpha=0.05)
    if reg_near_kink(inputs):
        return None
    _, _, g = reg_loss(inputs, literal_eq9)
    analytic = np.concatenate([np.concatenate([g[r][0], [g[r][1]]]) for r in "pqr"])
    x = np.concatenate([np.concatenate([f.W, [f.b]]) for f in fs])

    def loss(x):
        fx = [Discriminator(x[i * (d + 1): i * (d + 1) + d], x[i * (d + 1) + d]) for i in range(3)]
        return sum(reg_loss(RegInputs(*doms, *fx, alpha=0.05), literal_eq9)[:2])

    return analytic, fd_gradient(loss, x)


def _tiny_batch(rng, s, groups=2):
    return Batch(
        list(range(s.k)),
        [rng.normal((s.n, s.d_img)) for _ in range(s.k)],
        [rng.normal((s.m, s.d_txt)) for _ in range(s.k)],
        [[rng.normal((s.m, s.d_txt)) for _ in range(groups)] for _ in range(s.k)],
    )


def _random_bank(rng, ids, d):
    bank = DiscriminatorBank(d)
    for i in ids:
        bank[i] = _rand_disc(rng, d)
    return bank


def _generator_instance(rng, s, delta, flip_adv):
    batch = _tiny_batch(rng, s)
    gen = GeneratorParams.init(s.d_img, s.d_txt, s.dim, rng)
    gen.b_img = 0.1 * rng.normal(s.dim)
    gen.b_txt = 0.1 * rng.normal(s.dim)
    metric = MetricParams.from_tau(float(rng.uniform(None, 2.0, 10.0)))
    bank = _random_bank(rng, batch.pair_ids, s.dim)
    cfg = TrainerConfig(variant="addr", dim=s.dim, delta=delta, beta=float(rng.uniform(None, 0.05, 1.0)))
    imgs = PackedBatch(gen, batch.images, IMAGE)
    caps = PackedBatch(gen, batch.sentences, TEXT)
    if near_kink(score_padded(imgs.padded, imgs.mask, caps.padded, caps.mask, metric.tau), delta):
        return None
    _, _, g = generator_objective(batch, gen, metric, bank, cfg)
    analytic = np.concatenate([g[b].ravel() for b in GeneratorParams.BLOCKS] + [np.ravel(g["rho"])])
    shapes = [getattr(gen, b).shape for b in GeneratorParams.BLOCKS]
    x = np.concatenate([getattr(gen, b).ravel() for b in GeneratorParams.BLOCKS] + [[metric.rho]])

    def loss(x):
        parts, off = [], 0
        for shape in shapes:
            size = int(np.prod(shape))
            parts.append(x[off: off + size].reshape(shape))
            off += size
        return generator_objective(batch, GeneratorParams(*parts), MetricParams(float(x[-1])), bank, cfg,
                                   with_grads=False)[0]

    return analytic, fd_gradient(loss, x)


def _discriminator_instance(rng, s, delta, flip_adv):
    batch = _tiny_batch(rng, s)
    gen = GeneratorParams.init(s.d_img, s.d_txt, s.dim, rng)
    metric = MetricParams()
    bank = _random_bank(rng, batch.pair_ids, s.dim)
    cfg = TrainerConfig(variant="addr", dim=s.dim, delta=delta, gamma=float(rng.uniform(None, 0.1, 1.0)))
    imgs = PackedBatch(gen, batch.images, IMAGE)
    caps = PackedBatch(gen, batch.sentences, TEXT)
    if near_kink(score_padded(imgs.padded, imgs.mask, caps.padded, caps.mask, metric.tau), delta):
        return None
    _, _, grads = discriminator_objective(batch, gen, metric, bank, cfg)
    ids = sorted(grads)
    d = s.dim
    x = np.concatenate([np.concatenate([bank[i].W, [bank[i].b]]) for i in ids])

    def loss(x):
        b2 = DiscriminatorBank(d)
        for j, i in enumerate(ids):
            b2[i] = Discriminator(x[j * (d + 1): j * (d + 1) + d], x[j * (d + 1) + d])
        return discriminator_objective(batch, gen, metric, b2, cfg, with_grads=False)[0]

    fd = fd_gradient(loss, x)
    # the regularizer's hinges sit inside; resample when a coarser step disagrees
    if np.abs(fd - fd_gradient(loss, x, eps=1e-5)).max() > 1e-6 * max(1.0, np.abs(fd).max()):
        return None
    return np.concatenate([grads[i] for i in ids]), fd


_BUILDERS = {
    "triplet": _triplet_instance,
    "similarity": _similarity_instance,
    "adversarial": _adversarial_instance,
    "regularizer": _regularizer_instance,
    "generator": _generator_instance,
    "discriminator": _discriminator_instance,
}


def check_component(name: str, instances: int = 100, seed: int = 0, delta: float = 0.2,
                    flip_adv_sign: bool = False, max_tries: int = 20) -> ComponentResult:
    """Max relative error of analytic vs central-difference gradients for one component."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown component {name!r}; expected one of {COMPONENTS}")
    if instances < 1:
        raise ValueError("instances must be >= 1")
    rng = Rng.stream(seed, COMPONENTS.index(name) + 100)
    sizes = _Sizes()
    worst, done, skipped = 0.0, 0, 0
    while done < instances:
        out = _BUILDERS[name](rng, sizes, delta, flip_adv_sign)
        if out is None:
            skipped += 1
            if skipped > max_tries * instances:
                raise RuntimeError(f"{name}: could not sample instances away from kinks")
            continue
        analytic, fd = out
        worst = max(worst, rel_error(analytic, fd))
        done += 1
    return ComponentResult(name, worst, done, skipped)


def run_gradcheck(instances: int = 100, seed: int = 0, components=COMPONENTS,
                  flip_adv_sign: bool = False) -> list[ComponentResult]:
    return [check_component(c, instances, seed, flip_adv_sign=flip_adv_sign) for c in components]


def zero_instance_errors(dim: int = 8, n: int = 4, m: int = 3) -> dict:
    """Absolute gradient errors on a degenerate instance where every hinge is inactive.

    Matched scores beat all negatives by more than the margin, and each
    discriminator is confident on its own pair while blind on the others, so
    analytic and numerical gradients are both identically zero.
    """
    k = 3
    V = np.zeros((k, n, dim))
    W = np.zeros((k, m, dim))
    for p in range(k):
        V[p, :, p] = 1.0
        W[p, :, p] = 1.0
    vm, wm = np.ones((k, n), bool), np.ones((k, m), bool)
    M = score_padded(V, vm, W, wm, 10.0)
    _, gM = triplet_loss(M, 0.2)
    fd_M = fd_gradient(lambda x: triplet_loss(x, 0.2)[0], M)

    axes = np.eye(dim)
    fs = [Discriminator(5.0 * axes[i], 0.0) for i in range(3)]
    doms = [(np.tile(-axes[i], (n, 1)), np.tile(axes[i], (m, 1))) for i in range(3)]
    inputs = RegInputs(*doms, *fs, alpha=0.05)
    _, _, g = reg_loss(inputs)
    analytic = np.concatenate([np.concatenate([g[r][0], [g[r][1]]]) for r in "pqr"])
    x = np.concatenate([np.concatenate([f.W, [f.b]]) for f in fs])

    def loss(x):
        fx = [Discriminator(x[i * (dim + 1): i * (dim + 1) + dim], x[i * (dim + 1) + dim]) for i in range(3)]
        return sum(reg_loss(RegInputs(*doms, *fx, alpha=0.05))[:2])

    fd_reg = fd_gradient(loss, x)
    return {
        "triplet": float(np.abs(gM - fd_M).max()),
        "regularizer": float(np.abs(analytic - fd_reg).max()),
        "triplet_grad": float(np.abs(gM).max()),
        "regularizer_grad": float(np.abs(analytic).max()),
    }


def format_results(results) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:14s} max_rel_error={r.max_rel_error:.3e} instances={r.instances} "
                     f"resampled={r.resampled} {status}")
    return "\n".join(lines)
