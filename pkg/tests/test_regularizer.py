import numpy as np
from hypothesis import given, settings, strategies as st

from addrlab.discriminators import Discriminator, adv_loss
from addrlab.numerics import Rng, fd_gradient, rel_error
from addrlab.regularizer import (
    RegInputs, combine_hinges, domain_risk, reg_loss, risk_constraints_satisfied,
)
from fixtures import random_domain, random_reg_inputs


def risks(pp, pq, qq, qp, rr=0.0, rp=1.0, pr=1.0):
    return {("p", "p"): pp, ("p", "q"): pq, ("q", "q"): qq, ("q", "p"): qp,
            ("r", "r"): rr, ("r", "p"): rp, ("p", "r"): pr}


def test_domain_risk_zero_init():
    rng = Rng(0)
    dom = random_domain(rng, 4, 3, 5)
    assert abs(domain_risk(Discriminator.zeros(5), dom) - 7 * np.log(2)) < 1e-12


def test_domain_risk_functional_equality():
    rng = Rng(1)
    dom = random_domain(rng, 4, 3, 5)
    f = Discriminator(rng.normal(5), 0.2)
    assert domain_risk(f, dom) == domain_risk(f.copy(), dom)
    assert domain_risk(f, dom) == adv_loss(f, *dom)


def test_l1_slack():
    l1, _, _ = combine_hinges(risks(0.1, 0.9, 0.1, 0.9), 0.05)
    assert l1 == 0.0


def test_first_hinge_value():
    l1, _, active = combine_hinges(risks(0.6, 0.5, 0.1, 0.9), 0.05)
    assert abs(l1 - 0.15) < 1e-15
    assert active == [("p", "p", "q")]


def test_literal_form_repeats_q_hinge():
    r = risks(0.1, 0.9, 0.5, 0.2, rr=0.1, rp=0.9, pr=0.9)
    l1, l2, _ = combine_hinges(r, 0.05)
    assert abs(l1 - 0.35) < 1e-15 and l2 == 0.0
    _, l2_lit, _ = combine_hinges(r, 0.05, literal_eq9=True)
    assert abs(l2_lit - 0.35) < 1e-15


def test_q_equals_r_counts_once():
    rng = Rng(2)
    inp = random_reg_inputs(rng, q_is_r=True)
    l1, l2, _ = reg_loss(inp)
    assert l2 == 0.0
    dup = RegInputs(inp.domain_p, inp.domain_q, inp.domain_r, inp.f_p, inp.f_q, inp.f_r, inp.alpha)
    l1d, l2d, _ = reg_loss(dup)
    assert l1d == l1 and abs(l2d - l1) < 1e-12


def test_identical_discriminators_satisfy_printed_constraints():
    rng = Rng(3)
    inp = random_reg_inputs(rng)
    f = Discriminator(rng.normal(8), 0.1)
    inp.f_p = inp.f_q = inp.f_r = f
    for alpha in (0.0, 0.05, 1.0):
        inp.alpha = alpha
        assert risk_constraints_satisfied(inp) == (True,) * 4


def test_zero_reg_implies_constraints():
    rng = Rng(4)
    hits = 0
    for _ in range(500):
        inp = random_reg_inputs(rng)
        l1, l2, _ = reg_loss(inp)
        if l1 == 0 and l2 == 0:
            hits += 1
            assert all(risk_constraints_satisfied(inp))
            assert all(risk_constraints_satisfied(inp, hinge_margin=True))
    assert hits > 10


def test_constraints_match_direct_inequalities():
    rng = Rng(5)
    for _ in range(100):
        inp = random_reg_inputs(rng)
        L = lambda d, f: adv_loss(f, *d)
        expected = (
            L(inp.domain_p, inp.f_p) <= L(inp.domain_p, inp.f_q) + inp.alpha,
            L(inp.domain_p, inp.f_p) <= L(inp.domain_p, inp.f_r) + inp.alpha,
            L(inp.domain_q, inp.f_q) <= L(inp.domain_q, inp.f_p) + inp.alpha,
            L(inp.domain_r, inp.f_r) <= L(inp.domain_r, inp.f_p) + inp.alpha,
        )
        assert risk_constraints_satisfied(inp) == expected


def test_all_slack_has_zero_gradient():
    rng = Rng(6)
    found = 0
    while found < 20:
        inp = random_reg_inputs(rng)
        l1, l2, g = reg_loss(inp)
        if l1 == l2 == 0:
            found += 1
            for role in "pqr":
                assert not g[role][0].any() and g[role][1] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_reg_loss_permutation_invariant(seed):
    rng = Rng(seed)
    inp = random_reg_inputs(rng)
    l1, l2, _ = reg_loss(inp)
    perm = lambda dom: (dom[0][::-1], dom[1][[2, 0, 1]])
    shuffled = RegInputs(perm(inp.domain_p), perm(inp.domain_q), perm(inp.domain_r),
                         inp.f_p, inp.f_q, inp.f_r, inp.alpha)
    l1s, l2s, _ = reg_loss(shuffled)
    assert abs(l1 - l1s) < 1e-12 and abs(l2 - l2s) < 1e-12


def _theta(inp):
    return np.concatenate([np.concatenate([f.W, [f.b]]) for f in (inp.f_p, inp.f_q, inp.f_r)])


def _with_theta(inp, th, d):
    fs = [Discriminator(th[i * (d + 1): i * (d + 1) + d], th[i * (d + 1) + d]) for i in range(3)]
    return RegInputs(inp.domain_p, inp.domain_q, inp.domain_r, *fs, inp.alpha)


def _kinked(inp, tol=1e-3):
    r = {}
    for dom in "pqr":
        for role in "pqr":
            r[(dom, role)] = domain_risk(inp.disc(role), inp.domain(dom))
    terms = [("p", "p", "q"), ("q", "q", "p"), ("r", "r", "p"), ("p", "p", "r")]
    return any(abs(inp.alpha + r[(d, o)] - r[(d, x)]) < tol for d, o, x in terms)


def test_reg_grads_match_fd():
    rng = Rng(7)
    d, checked = 8, 0
    while checked < 100:
        inp = random_reg_inputs(rng, d=d)
        if _kinked(inp):
            continue
        _, _, g = reg_loss(inp)
        analytic = np.concatenate([np.concatenate([g[r][0], [g[r][1]]]) for r in "pqr"])
        fd = fd_gradient(lambda th: sum(reg_loss(_with_theta(inp, th, d))[:2]), _theta(inp))
        assert rel_error(analytic, fd) < 1e-4 or np.abs(analytic - fd).max() < 1e-9
        checked += 1
