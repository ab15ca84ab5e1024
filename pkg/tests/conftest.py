import numpy as np
import pytest

from devmix.estimation import EmConfig
from devmix.known_density import GaussianMixtureH0
from devmix.mixing import Atom, ConstraintClass, MixingMeasure
from devmix.model import DeviatedMixture, FamilyTag


def random_measure(rng, k, d, with_scale=False, weight_unit=None):
    """Random mixing measure; weight_unit makes weights multiples of 1/unit."""
    if weight_unit is not None:
        counts = rng.multinomial(weight_unit, np.full(k, 1.0 / k))
        while (counts == 0).any():
            counts = rng.multinomial(weight_unit, np.full(k, 1.0 / k))
        weights = counts / weight_unit
    else:
        weights = rng.dirichlet(np.full(k, 2.0))
    atoms = []
    for _ in range(k):
        loc = rng.uniform(-3, 3, size=d)
        if with_scale:
            A = rng.standard_normal((d, d))
            scale = A @ A.T + np.eye(d) * rng.uniform(0.2, 1.0)
            atoms.append(Atom(loc, scale))
        else:
            atoms.append(Atom(loc))
    return MixingMeasure(tuple(atoms), weights)


def random_em_scenario(rng):
    """A random (true model, EmConfig) pair for monotonicity/feasibility runs."""
    d = int(rng.integers(1, 3))
    k0 = int(rng.integers(1, 3))
    means = rng.uniform(-3, 3, size=(k0, d))
    while k0 > 1 and np.linalg.norm(means[0] - means[1]) < 1e-3:
        means = rng.uniform(-3, 3, size=(k0, d))
    covs = np.stack([np.eye(d) * rng.uniform(0.3, 1.5) for _ in range(k0)])
    h0 = GaussianMixtureH0(rng.dirichlet(np.full(k0, 3.0)), means, covs)

    use_scale = bool(rng.integers(2))
    k_star = int(rng.integers(1, 3))
    atoms = []
    for _ in range(k_star):
        loc = rng.uniform(3.5, 6.5, size=d) * rng.choice([-1.0, 1.0], size=d)
        atoms.append(Atom(loc, np.eye(d) * rng.uniform(0.4, 1.0) if use_scale else None))
    G = MixingMeasure(tuple(atoms), rng.dirichlet(np.full(k_star, 3.0)))
    fam = FamilyTag.location_scale() if use_scale else FamilyTag.location(np.eye(d) * 0.5)
    true = DeviatedMixture(h0, float(rng.uniform(0.15, 0.8)), G, fam)

    kind = ["exact", "over", "over_floor"][int(rng.integers(3))]
    size = k_star if kind == "exact" else k_star + int(rng.integers(0, 2))
    constraint = ConstraintClass(kind, size, 0.05 if kind == "over_floor" else None)
    cfg = EmConfig(
        constraint=constraint,
        family=fam,
        max_iterations=150,
        restarts=2,
        mean_box=8.0,
        eigen_bounds=(0.05, 10.0),
        seed=int(rng.integers(10**6)),
    )
    return true, cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
