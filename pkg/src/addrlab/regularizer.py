"""Hinge regularizers that keep each pair's discriminator distinct from its hard negatives'."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discriminators import Discriminator, adv_grads, adv_loss

ROLES = ("p", "q", "r")


@dataclass
class RegInputs:
    """Domains are ``(regions, words)`` tuples of embedded row matrices.

    ``q`` is the source pair of image ``p``'s hardest negative sentence,
    ``r`` the source pair of sentence ``p``'s hardest negative image.
    """

    domain_p: tuple
    domain_q: tuple
    domain_r: tuple
    f_p: Discriminator
    f_q: Discriminator
    f_r: Discriminator
    alpha: float = 0.05
    q_is_r: bool = False

    def domain(self, role):
        return getattr(self, "domain_" + role)

    def disc(self, role):
        return getattr(self, "f_" + role)


def domain_risk(f: Discriminator, domain) -> float:
    """Empirical risk of ``f`` on a pair's features: its summed cross-entropy."""
    regions, words = domain
    return adv_loss(f, regions, words)


def _hinge_terms(inputs: RegInputs, literal_eq9: bool = False):
    """Each term: ``(group, domain_role, own_role, other_role)`` for
    ``max[0, alpha + L_dom(f_own) - L_dom(f_other)]``."""
    l1 = [(1, "p", "p", "q"), (1, "q", "q", "p")]
    if literal_eq9:
        l2 = [(2, "q", "q", "p"), (2, "p", "p", "r")]
    elif inputs.q_is_r:
        # r duplicates q: both L2 hinges already appear in L1
        l2 = []
    else:
        l2 = [(2, "r", "r", "p"), (2, "p", "p", "r")]
    return l1 + l2


def _risks(inputs: RegInputs, terms):
    cache = {}
    for _, dom, own, other in terms:
        for role in (own, other):
            if (dom, role) not in cache:
                cache[(dom, role)] = domain_risk(inputs.disc(role), inputs.domain(dom))
    return cache


def combine_hinges(risk: dict, alpha: float, q_is_r: bool = False, literal_eq9: bool = False):
    """``(L1, L2, active)`` from risks keyed ``(domain_role, disc_role)``.

    ``active`` lists the hinges with positive argument as ``(domain, own, other)``.
    """
    probe = RegInputs(None, None, None, None, None, None, alpha, q_is_r)
    totals = {1: 0.0, 2: 0.0}
    active = []
    for group, dom, own, other in _hinge_terms(probe, literal_eq9):
        arg = alpha + risk[(dom, own)] - risk[(dom, other)]
        if arg > 0:
            totals[group] += arg
            active.append((dom, own, other))
    return totals[1], totals[2], active


def reg_loss(inputs: RegInputs, literal_eq9: bool = False):
    """Returns ``(L1, L2, grads)``; ``grads[role] = (grad_W, grad_b)`` for roles p, q, r."""
    risk = _risks(inputs, _hinge_terms(inputs, literal_eq9))
    l1, l2, active = combine_hinges(risk, inputs.alpha, inputs.q_is_r, literal_eq9)
    coef = {}
    for dom, own, other in active:
        coef[(dom, own)] = coef.get((dom, own), 0.0) + 1.0
        coef[(dom, other)] = coef.get((dom, other), 0.0) - 1.0
    dim = inputs.f_p.dim
    grads = {role: [np.zeros(dim), 0.0] for role in ROLES}
    for (dom, role), c in coef.items():
        if c == 0.0:
            continue
        regions, words = inputs.domain(dom)
        gW, gb, _, _ = adv_grads(inputs.disc(role), regions, words)
        grads[role][0] = grads[role][0] + c * gW
        grads[role][1] += c * gb
    return l1, l2, {k: (v[0], v[1]) for k, v in grads.items()}


def risk_constraints_satisfied(inputs: RegInputs, hinge_margin: bool = False):
    """The four pairwise risk inequalities as booleans.

    By default each reads ``R_dom(f_own) <= R_dom(f_other) + alpha``. With
    ``hinge_margin=True`` the margin is demanded in the regularizer's
    direction, ``alpha + R_dom(f_own) - R_dom(f_other) <= 0``, which is
    exactly the condition under which every hinge of :func:`reg_loss` is slack.
    """
    terms = [("p", "p", "q"), ("p", "p", "r"), ("q", "q", "p"), ("r", "r", "p")]
    out = []
    for dom, own, other in terms:
        mine = domain_risk(inputs.disc(own), inputs.domain(dom))
        theirs = domain_risk(inputs.disc(other), inputs.domain(dom))
        if hinge_margin:
            out.append(bool(inputs.alpha + mine - theirs <= 0))
        else:
            out.append(bool(mine <= theirs + inputs.alpha))
    return tuple(out)
