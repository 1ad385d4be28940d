"""Random fixture builders shared by tests and the acceptance suite."""

import numpy as np

from addrlab.discriminators import Discriminator
from addrlab.regularizer import RegInputs


def unit(X):
    return X / np.linalg.norm(X, axis=-1, keepdims=True)


def random_domain(rng, n, m, d, direction=None, strength=0.0):
    """Regions pushed toward ``-direction``, words toward ``+direction``."""
    V = rng.normal((n, d))
    W = rng.normal((m, d))
    if direction is not None:
        V = V - strength * direction
        W = W + strength * direction
    return unit(V), unit(W)


def random_reg_inputs(rng, d=8, n=4, m=3, alpha=0.05, q_is_r=False):
    """Discriminators paired with domains they separate to a random degree."""
    discs, domains = [], []
    for _ in range(2 if q_is_r else 3):
        direction = unit(rng.normal(d))
        scale = float(rng.uniform(None, 0.0, 4.0))
        discs.append(Discriminator(scale * direction + 0.3 * rng.normal(d), float(rng.normal() * 0.2)))
        domains.append(random_domain(rng, n, m, d, direction, float(rng.uniform(None, 0.0, 3.0))))
    if q_is_r:
        discs.append(discs[1])
        domains.append(domains[1])
    return RegInputs(domains[0], domains[1], domains[2], discs[0], discs[1], discs[2], alpha, q_is_r)
