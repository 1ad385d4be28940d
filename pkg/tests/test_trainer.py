import hashlib
import math

import numpy as np
import pytest

from addrlab.data import SyntheticSpec, generate_synthetic, split
from addrlab.discriminators import Discriminator, DiscriminatorBank, adv_loss
from addrlab.encoders import GeneratorParams
from addrlab.exceptions import DimensionMismatchError, FormatError
from addrlab.numerics import Rng, fd_gradient, rel_error
from addrlab.similarity import MetricParams
from addrlab.trainer import (
    UNITED_ID, Batch, Trainer, TrainerConfig, TrainerState, checkpoint_load, checkpoint_save,
    discriminator_objective, discriminator_phase, generator_objective, generator_phase, lr_at,
    resume, train,
)

D_IMG, D_TXT = 6, 5


def tiny_batch(rng, k=3, n=4, m=3, groups=2):
    return Batch(
        list(range(10, 10 + k)),
        [rng.normal((n, D_IMG)) for _ in range(k)],
        [rng.normal((m, D_TXT)) for _ in range(k)],
        [[rng.normal((m, D_TXT)) for _ in range(groups)] for _ in range(k)],
    )


def random_bank(rng, ids, dim):
    bank = DiscriminatorBank(dim)
    for i in ids:
        bank[i] = Discriminator(rng.normal(dim), float(rng.normal()))
    return bank


def flat_gen(gen, rho):
    return np.concatenate([v.ravel() for v in gen.blocks().values()] + [[rho]])


def unflat_gen(x, like):
    out, off = {}, 0
    for k, v in like.blocks().items():
        out[k] = x[off: off + v.size].reshape(v.shape)
        off += v.size
    return GeneratorParams(**out), float(x[off])


def block_hash(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def gen_hash(state):
    return block_hash(*state.gen.blocks().values(), np.array(state.metric.rho))


def test_lr_schedule():
    c = TrainerConfig(lr=0.001)
    assert lr_at(c, 0) == 0.001
    assert abs(lr_at(c, 7999) - 0.001) < 1e-18
    assert abs(lr_at(c, 8000) - 0.0002) < 1e-18
    assert lr_at(c, 24000) == 1e-5
    vals = [lr_at(c, i) for i in range(0, 100_000, 500)]
    assert all(a >= b for a, b in zip(vals, vals[1:])) and min(vals) >= 1e-5
    with pytest.raises(ValueError):
        lr_at(c, -1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(variant="other")
    with pytest.raises(ValueError):
        TrainerConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainerConfig(beta=-0.1)
    assert TrainerConfig(variant="base", beta=0.3).effective_beta == 0.0
    assert TrainerConfig(variant="multiple", gamma=0.3).effective_gamma == 0.0
    assert TrainerConfig(variant="united", gamma=0.3).effective_gamma == 0.0
    assert TrainerConfig().hash() == TrainerConfig().hash() != TrainerConfig(seed=1).hash()


def _kinky(batch, gen, metric, cfg, tol=1e-4):
    """True when a hinge or hard-negative argmax is within ``tol`` of switching."""
    from addrlab.encoders import IMAGE, TEXT, PackedBatch
    from addrlab.similarity import score_padded

    imgs = PackedBatch(gen, batch.images, IMAGE)
    caps = PackedBatch(gen, batch.sentences, TEXT)
    M = score_padded(imgs.padded, imgs.mask, caps.padded, caps.mask, metric.tau)
    k = len(M)
    off = np.where(np.eye(k, dtype=bool), -np.inf, M)
    for p in range(k):
        for v in (off[p], off[:, p]):
            top = np.sort(v)[-2:]
            if top[1] - top[0] < tol or abs(cfg.delta - M[p, p] + top[1]) < tol:
                return True
    return False


@pytest.mark.parametrize("beta", [0.0, 0.1, 2.0])
def test_generator_objective_fd(beta):
    cfg = TrainerConfig(variant="addr", beta=beta, dim=8, delta=0.2)
    checked, seed = 0, 0
    while checked < 25:
        rng = Rng(1000 + seed)
        seed += 1
        batch = tiny_batch(rng)
        gen = GeneratorParams.init(D_IMG, D_TXT, 8, rng)
        gen.b_img = 0.1 * rng.normal(8)
        gen.b_txt = 0.1 * rng.normal(8)
        metric = MetricParams.from_tau(float(rng.uniform(None, 2.0, 10.0)))
        bank = random_bank(rng, batch.pair_ids, 8)
        if _kinky(batch, gen, metric, cfg):
            continue
        obj, _, g = generator_objective(batch, gen, metric, bank, cfg)
        analytic = np.concatenate([g[k].ravel() for k in GeneratorParams.BLOCKS] + [[float(g["rho"])]])

        def f(x):
            gg, rho = unflat_gen(x, gen)
            return generator_objective(batch, gg, MetricParams(rho), bank, cfg)[0]

        assert rel_error(analytic, fd_gradient(f, flat_gen(gen, metric.rho))) < 1e-4
        checked += 1


def test_beta_zero_has_no_adversarial_component():
    rng = Rng(3)
    batch = tiny_batch(rng)
    gen = GeneratorParams.init(D_IMG, D_TXT, 8, rng)
    cfg = TrainerConfig(variant="addr", beta=0.0, dim=8)
    _, s1, g1 = generator_objective(batch, gen, MetricParams(), random_bank(rng, batch.pair_ids, 8), cfg)
    _, s2, g2 = generator_objective(batch, gen, MetricParams(), DiscriminatorBank(8), cfg)
    assert s1["l_adv"] == 0.0
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


def test_gradient_reversal_sign():
    rng = Rng(4)
    batch = tiny_batch(rng)
    gen = GeneratorParams.init(D_IMG, D_TXT, 8, rng)
    bank = random_bank(rng, batch.pair_ids, 8)
    on = TrainerConfig(variant="multiple", beta=0.5, dim=8)
    off = TrainerConfig(variant="base", dim=8)
    _, _, g_on = generator_objective(batch, gen, MetricParams(), bank, on)
    _, _, g_off = generator_objective(batch, gen, MetricParams(), bank, off)
    adv_part = g_on["A_img"] - g_off["A_img"]

    def mean_adv(a):
        g2 = gen.copy()
        g2.A_img = a
        from addrlab.encoders import IMAGE, TEXT, PackedBatch
        I = PackedBatch(g2, batch.images, IMAGE)
        T = PackedBatch(g2, batch.sentences, TEXT)
        return np.mean([adv_loss(bank[p], I.rows_of(i), T.rows_of(i)) for i, p in enumerate(batch.pair_ids)])

    d_adv = fd_gradient(mean_adv, gen.A_img)
    # the generator descends -beta * L_adv, i.e. ascends the discriminator's loss
    assert rel_error(adv_part, -0.5 * d_adv) < 1e-5
    assert np.sum(adv_part * d_adv) < 0


def test_discriminator_objective_fd():
    cfg = TrainerConfig(variant="addr", beta=0.1, gamma=0.4, dim=8)
    checked, seed = 0, 0
    while checked < 25:
        rng = Rng(2000 + seed)
        seed += 1
        batch = tiny_batch(rng, k=4)
        gen = GeneratorParams.init(D_IMG, D_TXT, 8, rng)
        bank = random_bank(rng, batch.pair_ids, 8)
        obj, _, grads = discriminator_objective(batch, gen, MetricParams(), bank, cfg)
        ids = sorted(grads)
        theta = np.concatenate([np.concatenate([bank[i].W, [bank[i].b]]) for i in ids])

        def f(x):
            b2 = DiscriminatorBank(8)
            for j, i in enumerate(ids):
                b2[i] = Discriminator(x[j * 9: j * 9 + 8], x[j * 9 + 8])
            return discriminator_objective(batch, gen, MetricParams(), b2, cfg)[0]

        fd = fd_gradient(f, theta)
        analytic = np.concatenate([grads[i] for i in ids])
        # skip instances sitting on a regularizer kink
        if np.abs(fd - fd_gradient(f, theta, eps=1e-7)).max() > 1e-5:
            continue
        assert rel_error(analytic, fd) < 1e-4
        checked += 1


def _state(cfg, rng=None):
    st = TrainerState(cfg, D_IMG, D_TXT)
    return st


def test_phase_isolation():
    rng = Rng(5)
    cfg = TrainerConfig(variant="addr", dim=8, disc_lr=0.05)
    st = _state(cfg)
    for _ in range(5):
        batch = tiny_batch(rng, k=4)
        g_before, b_before = gen_hash(st), st.bank.to_bytes()
        discriminator_phase(batch, st)
        assert gen_hash(st) == g_before and st.bank.to_bytes() != b_before
        g_before, b_before = gen_hash(st), st.bank.to_bytes()
        generator_phase(batch, st)
        assert gen_hash(st) != g_before and st.bank.to_bytes() == b_before


def test_multiple_variant_reduces_to_adv_descent():
    rng = Rng(6)
    batch = tiny_batch(rng, k=4)
    a = _state(TrainerConfig(variant="multiple", dim=8, gamma=0.7))
    b = _state(TrainerConfig(variant="addr", dim=8, gamma=0.0))
    h = gen_hash(a)
    discriminator_phase(batch, a)
    discriminator_phase(batch, b)
    assert gen_hash(a) == h
    assert a.bank == b.bank


def test_united_updates_single_discriminator():
    rng = Rng(7)
    st = _state(TrainerConfig(variant="united", dim=8))
    for _ in range(3):
        discriminator_phase(tiny_batch(rng, k=5), st)
    assert st.bank.ids() == [UNITED_ID]


def test_base_variant_has_no_discriminator_phase():
    st = _state(TrainerConfig(variant="base", dim=8))
    with pytest.raises(ValueError):
        discriminator_phase(tiny_batch(Rng(0)), st)


def _two_pair_batch(offset=2.0, d=8):
    rng = Rng(8)
    # frozen identity-like generators: separable modality clusters per pair
    a1, a2 = np.eye(d)[0] * offset, np.eye(d)[1] * offset
    imgs = [rng.normal((4, d)) * 0.2 - a1, rng.normal((4, d)) * 0.2 - a2]
    sents = [rng.normal((3, d)) * 0.2 + a1, rng.normal((3, d)) * 0.2 + a2]
    gen = GeneratorParams(np.eye(d), np.zeros(d), np.eye(d), np.zeros(d))
    return Batch([0, 1], imgs, sents, [[s] for s in sents]), gen


def test_two_pair_fixture_discriminators_learn():
    batch, gen = _two_pair_batch()
    cfg = TrainerConfig(variant="addr", dim=8, gamma=0.4, disc_lr=0.01)
    st = _state(cfg)
    st.gen = gen
    for _ in range(200):
        discriminator_phase(batch, st)
    from addrlab.encoders import IMAGE, TEXT, PackedBatch
    I = PackedBatch(gen, batch.images, IMAGE)
    T = PackedBatch(gen, batch.sentences, TEXT)
    for p in (0, 1):
        own = adv_loss(st.bank[p], I.rows_of(p), T.rows_of(p))
        assert own < 7 * math.log(2)  # zero-init start
        assert own / 7 < math.log(2)  # mean BCE below chance


def test_descent_sanity_small_lr():
    batch, gen = _two_pair_batch(offset=0.5)
    cfg = TrainerConfig(variant="addr", dim=8, gamma=0.4)
    bank = DiscriminatorBank(8)
    rng = Rng(9)
    for p in (0, 1):
        bank[p] = Discriminator(0.1 * rng.normal(8), 0.0)
    prev = None
    for _ in range(50):
        obj, _, grads = discriminator_objective(batch, gen, MetricParams(), bank, cfg)
        if prev is not None:
            assert obj < prev
        prev = obj
        for i, g in grads.items():
            f = bank[i]
            bank[i] = Discriminator(f.W - 1e-3 * g[:8], f.b - 1e-3 * g[8])


SMALL = dict(concepts=2, images_per_concept=10, captions_per_image=3, regions=4, words=3,
             d_img=D_IMG, d_txt=D_TXT, latent_dim=4, separation=3.0, noise=0.2, instance_scale=0.8,
             overlap=0.0)


def small_dataset(seed=0, **kw):
    return split(generate_synthetic(SyntheticSpec(**{**SMALL, **kw}, seed=seed)), (0.6, 0.2, 0.2))


def test_base_reaches_perfect_val_recall_on_separable_set():
    # instances well apart relative to noise, latent fully recoverable from either modality
    ds = small_dataset(noise=0.05, instance_scale=1.0, images_per_concept=20, latent_dim=8,
                       d_img=16, d_txt=16)
    cfg = TrainerConfig(variant="base", dim=16, batch_size=8, epochs=30, lr=0.003, early_stop=False)
    res = train(cfg, ds)
    assert len(res.log.epochs) == 30
    assert any(e[1] == 100.0 and e[2] == 100.0 for e in res.log.epochs)


def _cfg(**kw):
    base = dict(variant="addr", dim=8, batch_size=4, epochs=3, lr=0.01, disc_lr=0.05)
    return TrainerConfig(**{**base, **kw})


def test_same_seed_identical_log():
    ds = small_dataset()
    a, b = train(_cfg(), ds), train(_cfg(), ds)
    assert a.log.deterministic_view() == b.log.deterministic_view()
    assert a.log.fingerprint() == b.log.fingerprint()
    assert a.bank == b.bank
    assert train(_cfg(seed=1), ds).log.fingerprint() != a.log.fingerprint()


def test_zero_weights_match_base():
    ds = small_dataset()
    a = train(_cfg(beta=0.0, gamma=0.0), ds)
    b = train(_cfg(variant="base"), ds)
    assert a.log.fingerprint() == b.log.fingerprint()
    assert len(a.bank) == 0


def test_batch_schedule_runs():
    ds = small_dataset()
    res = train(_cfg(schedule="batch"), ds)
    phases = [r[1] for r in res.log.records[:4]]
    assert phases == ["disc", "gen", "disc", "gen"]


def test_checkpoint_resume_identical(tmp_path):
    ds = small_dataset()
    full = Trainer(_cfg(epochs=4), ds).fit()
    tr = Trainer(_cfg(epochs=4), ds)
    tr.fit(2)
    checkpoint_save(tmp_path / "c.ckpt", tr.state)
    resumed = resume(tmp_path / "c.ckpt", ds)
    assert resumed.log.deterministic_view() == full.log.deterministic_view()
    assert resumed.bank == full.bank
    for k in GeneratorParams.BLOCKS:
        assert np.array_equal(getattr(resumed.gen, k), getattr(full.gen, k))
    assert resumed.metric.rho == full.metric.rho


def test_checkpoint_roundtrip_bytes(tmp_path):
    ds = small_dataset()
    tr = Trainer(_cfg(epochs=1), ds)
    tr.fit()
    checkpoint_save(tmp_path / "a", tr.state)
    checkpoint_save(tmp_path / "b", checkpoint_load(tmp_path / "a"))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_checkpoint_errors(tmp_path):
    ds = small_dataset()
    tr = Trainer(_cfg(epochs=1), ds)
    tr.fit()
    path = tmp_path / "c"
    checkpoint_save(path, tr.state)
    data = bytearray(path.read_bytes())
    data[12:16] = (16).to_bytes(4, "little")  # header dim
    (tmp_path / "dim").write_bytes(bytes(data))
    with pytest.raises(DimensionMismatchError):
        checkpoint_load(tmp_path / "dim")
    with pytest.raises(DimensionMismatchError):
        checkpoint_load(path, expected_dim=64)
    (tmp_path / "trunc").write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError):
        checkpoint_load(tmp_path / "trunc")
    (tmp_path / "magic").write_bytes(b"X" * 8 + path.read_bytes()[8:])
    with pytest.raises(FormatError):
        checkpoint_load(tmp_path / "magic")
    with pytest.raises((OSError, IsADirectoryError)):
        checkpoint_save("", tr.state)


def test_dataset_dim_mismatch_rejected(tmp_path):
    ds = small_dataset()
    other = small_dataset(d_img=7)
    tr = Trainer(_cfg(epochs=1), ds)
    with pytest.raises(DimensionMismatchError):
        Trainer(_cfg(), other, state=tr.state)
